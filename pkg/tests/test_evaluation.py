import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semlearn.basis import poly_trig_library
from semlearn.evaluation import (
    VectorField,
    adjacency_from_solutions,
    angular_deviation,
    average_field,
    mean_accuracy,
    metrics_json,
    one_step_predictions,
    predict_forward,
    rer,
    rpe,
    solutions_to_system,
    true_adjacency,
    true_solutions,
    vector_field,
)
from semlearn.exceptions import DegenerateError, OrderError, ShapeError
from semlearn.smoothing import SampledCurves
from semlearn.systems import (
    SimulationGrid,
    coupled_oscillators,
    ddm_system,
    integrate,
    pendulum_system,
    uniform_grid,
)

PEND = pendulum_system()


def scaled_pendulum(c):
    sols = true_solutions(PEND)
    sols[0].theta = sols[0].theta * c
    return sols


def zero_model(p=1, lib=None):
    sols = true_solutions(PEND if p == 1 else coupled_oscillators(p=p))
    for s in sols:
        s.theta = np.zeros_like(s.theta)
    return sols


@pytest.fixture(scope="module")
def states():
    rng = np.random.default_rng(0)
    return rng.uniform(-1, 1, (2, 1, 300))


def test_rer_examples(states):
    assert rer(true_solutions(PEND), PEND, PEND.library, states) == 0.0
    assert rer(scaled_pendulum(2.0), PEND, PEND.library, states) == pytest.approx(1.0)
    assert rer(scaled_pendulum(0.9), PEND, PEND.library, states) == pytest.approx(0.1)


@given(st.floats(-3, 3), st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_rer_scale_invariance(c, seed):
    states = np.random.default_rng(seed).uniform(-2, 2, (2, 1, 50))
    assert rer(scaled_pendulum(c), PEND, PEND.library, states) == pytest.approx(abs(c - 1), abs=1e-12)


def test_rer_degenerate():
    with pytest.raises(DegenerateError):
        rer(true_solutions(PEND), PEND, PEND.library, np.zeros((2, 1, 5)))


def test_adjacency_examples():
    ddm = ddm_system()
    e = true_adjacency(ddm)
    assert e.sum() == 80
    assert np.all(np.diag(e) == 1)
    assert e[0, 1] == 1 and e[19, 0] == 1 and e[20, 21] == 1
    zeros = adjacency_from_solutions(zero_model(), PEND.library, 2)
    assert zeros.tolist() == [[0]]
    assert true_adjacency(PEND).tolist() == [[1]]


def test_mean_accuracy():
    rng = np.random.default_rng(1)
    A = rng.integers(0, 2, (40, 40))
    assert mean_accuracy(A, A) == 1.0
    assert mean_accuracy(1 - A, A) == 0.0
    B = A.copy()
    B[3, 7] ^= 1
    assert mean_accuracy(B, A) == pytest.approx(1 - 1 / 1600)
    with pytest.raises(ShapeError):
        mean_accuracy(A, A[:3])


def test_vector_field_examples():
    f = vector_field(PEND, position_range=(0, np.pi / 2), velocity_range=(0, 1), resolution=2)
    arrows = {(x, v): tuple(a) for x, v, a in zip(f.x, f.v, f.arrows)}
    assert arrows[(0.0, 1.0)] == pytest.approx((1.0, 0.0))
    assert arrows[(np.pi / 2, 0.0)] == pytest.approx((0.0, -1.0))
    z = vector_field(zero_model(), lib=PEND.library, K=2)
    np.testing.assert_array_equal(z.arrows[:, 0], z.v)
    assert np.all(z.arrows[:, 1] == 0)
    with pytest.raises(OrderError):
        lib = poly_trig_library(1, 1, False)
        from semlearn.systems import OdeSystem

        vector_field(OdeSystem(p=1, K=1, omega=np.zeros((1, 0)), driving=lambda x, t: x))


def test_vector_field_conditioning():
    ddm = ddm_system()
    f = vector_field(ddm, i=18, b=0.2, resolution=3)
    state = np.full((2, 40, 1), 0.2)
    state[1] = 0.0
    state[0, 18, 0] = f.x[4]
    state[1, 18, 0] = f.v[4]
    assert f.arrows[4, 1] == pytest.approx(ddm.acceleration(state)[18, 0])


def test_field_average_and_deviation(tmp_path):
    f = vector_field(PEND)
    assert angular_deviation(f, f) == pytest.approx(0.0, abs=1e-7)
    g = average_field([f, f])
    np.testing.assert_array_equal(g.arrows, f.arrows)
    flipped = VectorField(f.x, f.v, -f.arrows, f.resolution)
    assert angular_deviation(flipped, f) == pytest.approx(np.pi)
    f.to_csv(tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "x,v,ax_arrow,av_arrow,magnitude"


def test_predict_forward_examples():
    init = np.array([[0.3], [0.1]])
    dt = 0.015625
    ref = integrate(PEND, init[:, 0], SimulationGrid(dt, np.array([0.0, dt])))
    out = predict_forward(PEND, init[:, None, :], dt)
    assert abs(out[0, 0, 0] - ref.values[0, -1]) < 1e-8
    zero = predict_forward(zero_model(), init[:, None, :], dt, lib=PEND.library, K=2)
    assert zero[0, 0, 0] == pytest.approx(0.3 + 0.1 * dt, abs=1e-14)
    np.testing.assert_array_equal(predict_forward(PEND, init[:, None, :], 0.0), init[:, None, :])


def test_predict_forward_flags_divergence():
    sys = solutions_to_system(scaled_pendulum(1.0), PEND.library, 2)
    sys.driving = lambda x, t: x**9 * 1e300
    with pytest.warns(RuntimeWarning):
        init = np.zeros((2, 1, 2))
        init[0, 0, 0] = 5.0
        out = predict_forward(sys, init, 1.0)
        assert np.all(np.isnan(out[..., 0])) and np.all(out[..., 1] == 0)
        assert rpe(out[0], np.ones((1, 2))) == pytest.approx(1.0)


def test_one_step_true_model_consistency():
    traj = integrate(PEND, [0.4, 0.0], uniform_grid(5.0, 641))
    curves = SampledCurves.from_trajectory(traj)
    t_val = traj.times[-512:]
    pred = one_step_predictions(PEND, curves, t_val, dt=traj.times[1])
    assert rpe(pred, traj.values[:, -512:]) < 1e-6


def test_rpe_examples():
    rng = np.random.default_rng(2)
    ref = rng.normal(size=(1, 30))
    assert rpe(ref, ref) == 0.0
    assert rpe(1.1 * ref, ref) == pytest.approx(0.1)
    ref4 = rng.normal(size=(4, 30))
    assert rpe(1.1 * ref4, ref4) == pytest.approx(0.05)
    with pytest.raises(DegenerateError):
        rpe(ref4, np.zeros((4, 30)))


def test_metrics_json_deterministic():
    m = {"b": np.float64(0.1), "a": [np.int64(3), np.arange(2)]}
    assert metrics_json(m) == metrics_json(dict(reversed(list(m.items()))))
    assert '"a"' in metrics_json(m).splitlines()[1]
