"""Metrics, adjacency extraction, vector fields and forward prediction."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .basis import BasisLibrary
from .exceptions import DegenerateError, OrderError, ShapeError
from .matching import SparseSolution
from .systems import OdeSystem, rk4_advance


def solutions_to_system(solutions: Sequence[SparseSolution], lib: BasisLibrary, K, name="discovered") -> OdeSystem:
    """Order-``K`` system ``d^K X_i + sum omega_il d^l X_i = beta_i' H(X)`` from per-equation fits."""
    sols = sorted(solutions, key=lambda s: s.equation_index)
    p = len(sols)
    if [s.equation_index for s in sols] != list(range(p)):
        raise ShapeError("solutions must cover every equation exactly once")
    if lib.p != p:
        raise ShapeError(f"library has {lib.p} variables, {p} equations given")
    beta = np.vstack([s.beta for s in sols]) if p else np.zeros((0, lib.D))
    omega = np.vstack([s.omega for s in sols]).reshape(p, K - 1)

    def driving(x, t):
        return np.tensordot(beta, lib.evaluate(x, t), axes=(1, 0))

    coef = np.hstack([-omega, beta])
    return OdeSystem(p=p, K=K, omega=omega, driving=driving, true_coef=coef, library=lib, name=name)


def true_solutions(system: OdeSystem) -> List[SparseSolution]:
    """Ground-truth coefficients of ``system`` as solutions (for adjacency and RER)."""
    if system.true_coef is None or system.library is None:
        raise ValueError(f"system {system.name!r} carries no library coefficients")
    K = system.K
    labels = [f"d{l}(x{{}})" for l in range(1, K)]
    out = []
    for i, theta in enumerate(np.asarray(system.true_coef, dtype=float)):
        labs = [lab.format(i + 1) for lab in labels] + system.library.labels
        out.append(SparseSolution(i, K, K, theta.copy(), np.zeros(K), 0.0, 0.0, labs))
    return out


def _as_system(model, lib=None, K=None):
    if isinstance(model, OdeSystem):
        return model
    if lib is None or K is None:
        raise ValueError("a solution list needs its library and K")
    return solutions_to_system(model, lib, K)


def rer(estimated, truth: OdeSystem, lib=None, sample_states=None, t=0.0):
    """Relative error of the explicit highest derivative, RMS over ``sample_states``.

    ``sample_states`` has shape ``(K, p, m)``; the result is the mean over
    equations of ``||a_hat_i - a_i|| / ||a_i||`` with
    ``a = f(X) - sum_l omega_l d^l X``.
    """
    est = _as_system(estimated, lib, truth.K)
    states = np.asarray(sample_states, dtype=float)
    if states.ndim != 3 or states.shape[:2] != (truth.K, truth.p) or states.shape[2] == 0:
        raise ShapeError(f"sample_states must have shape ({truth.K}, {truth.p}, m>0)")
    a_true = truth.acceleration(states, t)
    a_est = est.acceleration(states, t)
    den = np.sqrt(np.mean(a_true**2, axis=1))
    if np.any(den == 0):
        raise DegenerateError("true driving function vanishes on the sample states")
    num = np.sqrt(np.mean((a_est - a_true) ** 2, axis=1))
    return float(np.mean(num / den))


def adjacency_from_solutions(solutions: Sequence[SparseSolution], lib: BasisLibrary, K) -> np.ndarray:
    """``e[i, j] = 1`` iff a supported feature of equation ``i`` depends on ``X_j``.

    The diagonal is also set when any ``omega_il`` is nonzero.
    """
    dep = lib.dependency_matrix()
    p = lib.p
    e = np.zeros((p, p), dtype=int)
    for sol in solutions:
        i = sol.equation_index
        beta = np.asarray(sol.beta)
        if beta.size != lib.D:
            raise ShapeError(f"solution {i} has {beta.size} features, library has {lib.D}")
        e[i] = np.any(dep[beta != 0], axis=0)
        if np.any(np.asarray(sol.omega) != 0):
            e[i, i] = 1
    return e


def true_adjacency(system: OdeSystem) -> np.ndarray:
    return adjacency_from_solutions(true_solutions(system), system.library, system.K)


def mean_accuracy(est, truth):
    est = np.asarray(est)
    truth = np.asarray(truth)
    if est.shape != truth.shape:
        raise ShapeError("adjacency shapes differ")
    return float(np.mean(est == truth))


@dataclass
class VectorField:
    x: np.ndarray  # positions, flattened grid
    v: np.ndarray  # velocities, flattened grid
    arrows: np.ndarray  # (m, 2): (velocity, acceleration)
    resolution: int

    @property
    def magnitude(self):
        return np.hypot(self.arrows[:, 0], self.arrows[:, 1])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "v", "ax_arrow", "av_arrow", "magnitude"])
            for row in zip(self.x, self.v, self.arrows[:, 0], self.arrows[:, 1], self.magnitude):
                w.writerow([repr(float(c)) for c in row])


def vector_field(model, i=0, position_range=(-0.5, 0.5), velocity_range=(-0.5, 0.5), resolution=16, b=0.0,
                 lib=None, K=2) -> VectorField:
    """Arrows ``(v, d^2X_i)`` on a position/velocity grid with other positions pinned at ``b``."""
    system = _as_system(model, lib, K)
    if system.K != 2:
        raise OrderError("vector fields are defined for second-order systems only")
    xs = np.linspace(*position_range, resolution)
    vs = np.linspace(*velocity_range, resolution)
    X, V = np.meshgrid(xs, vs, indexing="ij")
    x, v = X.ravel(), V.ravel()
    state = np.zeros((2, system.p, x.size))
    state[0] = b
    state[0, i] = x
    state[1, i] = v
    acc = system.acceleration(state)[i]
    return VectorField(x, v, np.column_stack([v, acc]), resolution)


def average_field(fields: Sequence[VectorField]) -> VectorField:
    f0 = fields[0]
    arrows = np.mean([f.arrows for f in fields], axis=0)
    return VectorField(f0.x.copy(), f0.v.copy(), arrows, f0.resolution)


def angular_deviation(field: VectorField, reference: VectorField):
    """Mean angle (radians) between corresponding arrows; zero-length arrows are skipped."""
    a, r = field.arrows, reference.arrows
    na, nr = np.hypot(*a.T), np.hypot(*r.T)
    keep = (na > 0) & (nr > 0)
    if not np.any(keep):
        return 0.0
    cos = np.sum(a[keep] * r[keep], axis=1) / (na[keep] * nr[keep])
    return float(np.mean(np.arccos(np.clip(cos, -1.0, 1.0))))


def predict_forward(model, init, horizon, lib=None, K=None, n_sub=8, t0=0.0):
    """Integrate the model over ``horizon`` from ``init`` (shape ``(K, p, ...)``).

    Trajectories that become non-finite are returned as NaN.
    """
    system = _as_system(model, lib, K)
    state = np.asarray(init, dtype=float)
    if state.shape[:2] != (system.K, system.p):
        raise ShapeError(f"init must have leading shape ({system.K}, {system.p})")
    if horizon == 0:
        return state.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        out = rk4_advance(system, state, t0, t0 + horizon, max(8, int(n_sub)))
    bad = ~np.all(np.isfinite(out), axis=(0, 1))
    if np.any(bad):
        out[..., bad] = np.nan
    return out


def one_step_predictions(model, curves, times, dt=0.015625, lib=None, K=None, n_sub=8):
    """Predict ``X(t)`` from the smoothed state at ``t - dt`` for every ``t`` in ``times``."""
    system = _as_system(model, lib, K)
    times = np.asarray(times, dtype=float)
    init = np.stack([curves.evaluate(l, times - dt) for l in range(system.K)])
    return predict_forward(system, init, dt, n_sub=n_sub)[0]


def rpe(predictions, reference):
    """``(1/p) * sqrt(sum_i SSE_i / sum_j ref_ij^2)``; columns with non-finite predictions are dropped."""
    pred = np.atleast_2d(np.asarray(predictions, dtype=float))
    ref = np.atleast_2d(np.asarray(reference, dtype=float))
    if pred.shape != ref.shape:
        raise ShapeError("predictions and reference differ in shape")
    ok = np.all(np.isfinite(pred), axis=0)
    dropped = int(np.sum(~ok))
    if dropped:
        warnings.warn(f"{dropped} diverged predictions excluded from RPE", RuntimeWarning, stacklevel=2)
    pred, ref = pred[:, ok], ref[:, ok]
    energy = np.sum(ref**2, axis=1)
    if np.any(energy == 0):
        raise DegenerateError("reference channel has zero energy")
    sse = np.sum((pred - ref) ** 2, axis=1)
    return float(np.sqrt(np.sum(sse / energy)) / pred.shape[0])


def metrics_json(metrics: dict) -> str:
    """Deterministic JSON (sorted keys, round-trip floats)."""
    return json.dumps(_plain(metrics), indent=2, sort_keys=True)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj
