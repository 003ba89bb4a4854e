import numpy as np
import pytest

from semlearn.exceptions import GridError, InsufficientDataError, OrderError
from semlearn.smoothing import (
    SplineSmoother,
    default_nu_grid,
    eval_derivative,
    fit_smoother,
    gcv_scores,
    gcv_select,
    smooth_observations,
    spline_space,
)

T = np.linspace(0.0, 5.0, 60)


@pytest.mark.parametrize("nu", [1e-6, 1e-2, 10.0])
def test_linear_reproduced(nu):
    curve = fit_smoother(2 * T + 1, T, q=2, nu=nu)
    np.testing.assert_allclose(curve.derivative(0, T), 2 * T + 1, atol=1e-8)
    np.testing.assert_allclose(eval_derivative(curve, 1, T), 2.0, atol=1e-8)


@pytest.mark.parametrize("q", [1, 2, 3])
def test_null_space_polynomials(q):
    y = sum((j + 1) * T**j for j in range(q))
    curve = fit_smoother(y, T, q=q, nu=0.5)
    np.testing.assert_allclose(curve.derivative(0, T), y, atol=1e-8 * np.max(np.abs(y)))


def test_large_nu_gives_mean(rng):
    y = rng.normal(size=T.size)
    curve = fit_smoother(y, T, q=1, nu=1e12)
    np.testing.assert_allclose(curve.derivative(0, T), y.mean(), atol=1e-6)


def test_cubic_near_interpolation():
    t = np.linspace(0.0, 1.0, 200)
    curve = fit_smoother(t**3, t, q=2, nu=1e-10)
    assert np.max(np.abs(curve.derivative(0, t) - t**3)) < 1e-4


def test_order_zero_identity():
    curve = fit_smoother(np.sin(T), T, q=2, nu=1e-3)
    assert curve.derivative(0, T[7]) == pytest.approx(curve.derivative(0, T)[7])


def test_sine_second_derivative():
    c = 4 * np.pi
    t = np.linspace(0.0, c, 400)
    curve = gcv_select(np.sin(t), t, q=3)[1]
    inner = (t > 0.5) & (t < c - 0.5)
    assert np.max(np.abs(curve.derivative(2, t[inner]) + np.sin(t[inner]))) < 1e-2


def test_errors():
    with pytest.raises(InsufficientDataError):
        fit_smoother(np.ones(3), np.arange(3.0), q=2)
    with pytest.raises(GridError):
        fit_smoother(np.ones(5), np.array([0, 1, 1, 2, 3.0]), q=2)
    curve = fit_smoother(np.sin(T), T, q=2)
    with pytest.raises(OrderError):
        curve.derivative(3, 1.0)


def test_gcv_single_grid_value():
    nu, _ = gcv_select(np.sin(T), T, q=2, nu_grid=[0.37])
    assert nu == 0.37


def test_gcv_noiseless_prefers_small_nu():
    grid = default_nu_grid(T, 2)
    scores = gcv_scores(np.sin(T), T, 2, grid)
    assert scores[0] <= scores[-1]


def test_gcv_pure_noise_selects_largest():
    t = np.linspace(0.0, 1.0, 50)
    grid = default_nu_grid(t, 2)
    hits = sum(gcv_select(np.random.default_rng(s).normal(size=t.size), t, 2, grid)[0] == grid.max()
               for s in range(100))
    assert hits >= 90


def test_rss_monotone_in_nu(rng):
    y = np.sin(T) + 0.1 * rng.normal(size=T.size)
    rss = [np.sum((y - fit_smoother(y, T, 2, nu).derivative(0, T)) ** 2) for nu in np.logspace(-8, 2, 15)]
    assert np.all(np.diff(rss) >= -1e-12)


@pytest.mark.parametrize("q", [1, 2, 3])
def test_hat_matrix_spectrum(q):
    A = spline_space(T, q).hat_matrix(1e-3)
    np.testing.assert_allclose(A, A.T, atol=1e-10)
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    assert ev.min() > -1e-8 and ev.max() < 1 + 1e-8


def test_derivative_error_grows_with_order():
    c = 10.0
    t = np.linspace(0.0, c, 200)
    y = np.sin(t) + 0.05 * np.random.default_rng(3).normal(size=t.size)
    curves = smooth_observations(y[None, :], t, q=2, domain=(0.0, c))
    inner = np.linspace(1.0, c - 1.0, 500)
    truth = [np.sin(inner), np.cos(inner), -np.sin(inner)]
    errs = [np.sqrt(np.mean((curves.evaluate(l, inner)[0] - truth[l]) ** 2)) for l in range(3)]
    assert errs[0] < errs[1] < errs[2]


def test_smoothed_set_csv(tmp_path):
    curves = smooth_observations(np.vstack([np.sin(T), np.cos(T)]), T, q=2, domain=(0.0, 5.0))
    path = tmp_path / "s.csv"
    curves.to_csv(path, n_points=50, max_order=1)
    header = path.read_text().splitlines()[0]
    assert header == "t,x1,dx1,x2,dx2"


def test_sklearn_wrapper():
    model = SplineSmoother(q=2).fit(T[:, None], np.sin(T))
    assert model.predict(T[:, None]).shape == T.shape
