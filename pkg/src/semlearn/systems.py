"""Benchmark dynamical systems, RK4 integration and noisy observations.

States of an order-``K`` system are stored derivative-major: an array of shape
``(K, p, ...)`` holds ``X, dX/dt, ..., d^{K-1}X/dt^{K-1}``.  Flat state
vectors of length ``p * K`` use the same ordering.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .basis import BasisLibrary, poly_trig_library
from .exceptions import ConfigurationError, DivergenceError, GridError

# Internal RK4 step never exceeds horizon / MIN_STEPS_PER_HORIZON.
MIN_STEPS_PER_HORIZON = 2048

Driving = Callable[[np.ndarray, object], np.ndarray]


@dataclass
class OdeSystem:
    """``d^K X_i + sum_l omega[i, l-1] d^l X_i = driving(X, t)_i``.

    ``driving`` maps an array of shape ``(p, ...)`` to the same shape.
    ``true_coef`` (optional) holds, per equation, ``theta_i = (-omega_i, beta_i)``
    in ``library``.
    """

    p: int
    K: int
    omega: np.ndarray
    driving: Driving
    true_coef: Optional[np.ndarray] = None
    library: Optional[BasisLibrary] = None
    name: str = "system"

    def __post_init__(self):
        if self.K < 1:
            raise ConfigurationError("differential order K must be >= 1")
        self.omega = np.asarray(self.omega, dtype=float).reshape(self.p, self.K - 1)

    def acceleration(self, state, t=0.0):
        """Highest derivative ``d^K X`` given ``state`` of shape ``(K, p, ...)``."""
        state = np.asarray(state, dtype=float)
        acc = np.asarray(self.driving(state[0], t), dtype=float)
        for l in range(1, self.K):
            w = self.omega[:, l - 1].reshape((self.p,) + (1,) * (state.ndim - 2))
            acc = acc - w * state[l]
        return acc

    def companion(self, state, t=0.0):
        """Right-hand side of the first-order companion system."""
        out = np.empty_like(state)
        out[:-1] = state[1:]
        out[-1] = self.acceleration(state, t)
        return out


@dataclass
class SimulationGrid:
    c: float
    times: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or self.times.size == 0:
            raise GridError("grid must be a nonempty 1-D array")
        if np.any(np.diff(self.times) <= 0):
            raise GridError("grid times must be strictly increasing")
        if self.times[0] < 0 or self.times[-1] > self.c * (1 + 1e-12):
            raise GridError("grid times must lie in [0, C]")

    @property
    def n(self):
        return self.times.size


def uniform_grid(c, n):
    """``n`` evenly spaced points covering ``[0, c]`` including both ends."""
    return SimulationGrid(float(c), np.linspace(0.0, float(c), int(n)))


@dataclass
class TrajectorySet:
    grid: SimulationGrid
    values: np.ndarray
    derivatives: Optional[np.ndarray] = None  # (K + 1, p, n); slice 0 == values

    @property
    def p(self):
        return self.values.shape[0]

    @property
    def times(self):
        return self.grid.times


@dataclass
class NoisyObservations:
    grid: SimulationGrid
    y: np.ndarray
    gamma: float
    sigma: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def times(self):
        return self.grid.times


def as_state(init, p, K):
    """Reshape a flat ``p*K`` vector (or ``(K, p)`` array) to ``(K, p)``."""
    arr = np.asarray(init, dtype=float)
    if arr.shape == (K, p):
        return arr.copy()
    if arr.size != p * K:
        raise ConfigurationError(f"initial state needs {p * K} entries, got {arr.size}")
    return arr.reshape(K, p).copy()


def rk4_advance(system, state, t0, t1, n_sub):
    """Advance ``state`` (shape ``(K, p, ...)``) from ``t0`` to ``t1`` in ``n_sub`` RK4 steps."""
    h = (t1 - t0) / n_sub
    z = state
    t = t0
    f = system.companion
    for _ in range(n_sub):
        k1 = f(z, t)
        k2 = f(z + 0.5 * h * k1, t + 0.5 * h)
        k3 = f(z + 0.5 * h * k2, t + 0.5 * h)
        k4 = f(z + h * k3, t + h)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return z


def integrate(system: OdeSystem, init, grid: SimulationGrid, max_step=None) -> TrajectorySet:
    """Integrate ``system`` from ``init`` (state at ``grid.times[0]``) over ``grid``.

    Classical RK4 on the companion system.  Internal steps are no longer than
    ``min(min grid spacing, C / 2048)`` unless ``max_step`` is given.
    """
    p, K = system.p, system.K
    z = as_state(init, p, K)
    if not np.all(np.isfinite(z)):
        raise ConfigurationError("initial state must be finite")
    times = grid.times
    if max_step is None:
        limit = grid.c / MIN_STEPS_PER_HORIZON if grid.c > 0 else np.inf
        if times.size > 1:
            limit = min(limit, float(np.min(np.diff(times))))
        max_step = limit
    out = np.empty((K + 1, p, times.size))
    out[:K, :, 0] = z
    for j in range(1, times.size):
        t0, t1 = times[j - 1], times[j]
        n_sub = max(1, int(math.ceil((t1 - t0) / max_step - 1e-9)))
        z = rk4_advance(system, z, t0, t1, n_sub)
        if not np.all(np.isfinite(z)):
            raise DivergenceError(f"non-finite state at t={t1:.6g}", time=t1)
        out[:K, :, j] = z
    out[K] = system.acceleration(out[:K], times)
    return TrajectorySet(grid=grid, values=out[0].copy(), derivatives=out)


def pendulum_system() -> OdeSystem:
    """``d^2X/dt^2 = -sin X`` with its true coefficients in the degree-4 poly+trig library."""
    lib = poly_trig_library(1, 4, include_trig=True)
    coef = np.zeros((1, 1 + lib.D))
    coef[0, 1 + lib.labels.index("sin(x1)")] = -1.0
    return OdeSystem(
        p=1,
        K=2,
        omega=np.zeros((1, 1)),
        driving=lambda x, t: -np.sin(x),
        true_coef=coef,
        library=lib,
        name="pendulum",
    )


def _check_permutation(tau, allowed, name):
    tau = [int(v) for v in tau]
    if sorted(tau) != sorted(allowed):
        raise ConfigurationError(f"{name} must be a permutation of {allowed[0]}..{allowed[-1]}")
    return tau


def ddm_system(tau1: Optional[Sequence[int]] = None, tau2: Optional[Sequence[int]] = None) -> OdeSystem:
    """40-node second-order dynamic directional model (two directed loops of 20).

    ``tau1`` / ``tau2`` are 1-based permutations of 1..20 / 21..40 giving the
    driver of each node; the default is the cyclic shift ``i -> i + 1``.

    The damping term is written ``- b * dX_i/dt`` on the right-hand side with
    ``b = -1.3`` (cluster 1) and ``b = -2`` (cluster 2), so ``omega_i1 = b``
    and the explicit acceleration contains ``+1.3 dX_i/dt`` / ``+2 dX_i/dt``.
    """
    c1 = list(range(1, 21))
    c2 = list(range(21, 41))
    tau1 = c1[1:] + c1[:1] if tau1 is None else _check_permutation(tau1, c1, "tau1")
    tau2 = c2[1:] + c2[:1] if tau2 is None else _check_permutation(tau2, c2, "tau2")
    driver = np.array([v - 1 for v in tau1 + tau2])
    idx = np.arange(1, 41)
    self_coef = np.where(idx <= 20, -4.0, -3.5)
    couple_coef = np.where(idx <= 20, 1.2, 2.0) * (-1.0) ** idx
    damping = np.where(idx <= 20, -1.3, -2.0)

    def driving(x, t):
        return self_coef.reshape((40,) + (1,) * (x.ndim - 1)) * x + couple_coef.reshape(
            (40,) + (1,) * (x.ndim - 1)
        ) * x[driver]

    lib = poly_trig_library(40, 1, include_trig=False)
    coef = np.zeros((40, 1 + lib.D))
    coef[:, 0] = -damping
    for i in range(40):
        coef[i, 1 + 1 + i] += self_coef[i]
        coef[i, 1 + 1 + driver[i]] += couple_coef[i]
    system = OdeSystem(
        p=40,
        K=2,
        omega=damping[:, None],
        driving=driving,
        true_coef=coef,
        library=lib,
        name="ddm",
    )
    system.driver = driver
    return system


def ddm_initial_state():
    """Initial positions and velocities of the 40-node model, shape ``(2, 40)``."""
    i = np.arange(1, 41)
    x0 = np.where(i <= 20, 1.0 - (i - 1) / 38.0, 1.5 - (i - 21) / 38.0)
    v0 = np.where(i <= 20, -1.5 + (-1.0) ** i * 0.5, -1.5 + 2.0 * (i - 21) / 19.0)
    return np.vstack([x0, v0])


def coupled_oscillators(p=6, cluster_size=3, stiffness=(4.0, 9.0), coupling=1.5, damping=0.3) -> OdeSystem:
    """Damped linear oscillators joined in directed loops of ``cluster_size`` nodes.

    ``d^2X_i = -a_i X_i + (-1)^i c X_{next(i)} - b dX_i``; ``a_i`` is spread
    linearly over ``stiffness``.  Used as a small stable second-order network.
    """
    if p % cluster_size:
        raise ConfigurationError("p must be a multiple of cluster_size")
    driver = np.array([(i // cluster_size) * cluster_size + (i + 1) % cluster_size for i in range(p)])
    a = np.linspace(stiffness[0], stiffness[1], p)
    c = coupling * (-1.0) ** np.arange(1, p + 1)

    def driving(x, t):
        shape = (p,) + (1,) * (x.ndim - 1)
        return -a.reshape(shape) * x + c.reshape(shape) * x[driver]

    lib = poly_trig_library(p, 1, include_trig=False)
    coef = np.zeros((p, 1 + lib.D))
    coef[:, 0] = -damping
    for i in range(p):
        coef[i, 2 + i] += -a[i]
        coef[i, 2 + driver[i]] += c[i]
    system = OdeSystem(
        p=p,
        K=2,
        omega=np.full((p, 1), float(damping)),
        driving=driving,
        true_coef=coef,
        library=lib,
        name="oscillators",
    )
    system.driver = driver
    return system


def add_noise(traj: TrajectorySet, gamma, seed=None) -> NoisyObservations:
    """Gaussian measurement noise with ``sigma_i^2 = gamma^2 * int X_i^2 dt / C``."""
    if gamma < 0:
        raise ConfigurationError("gamma must be nonnegative")
    x = traj.values
    c = traj.grid.c
    if gamma == 0:
        return NoisyObservations(traj.grid, x.copy(), 0.0, np.zeros(traj.p))
    energy = np.trapezoid(x**2, traj.times, axis=1) / c
    sigma = gamma * np.sqrt(energy)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(x.shape) * sigma[:, None]
    return NoisyObservations(traj.grid, x + eps, float(gamma), sigma)


def write_csv(path, times, values, prefix="x", columns=None):
    """Write ``t,x1..xp`` rows with round-trip float formatting."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if columns is None:
        columns = [f"{prefix}{i + 1}" for i in range(values.shape[0])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", *columns])
        for j, t in enumerate(times):
            writer.writerow([repr(float(t)), *(repr(float(v)) for v in values[:, j])])


def read_csv(path):
    """Inverse of :func:`write_csv`; returns ``(times, values[p, n], column_names)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ConfigurationError(f"{path}: no data rows")
    data = np.array(rows)
    return data[:, 0], data[:, 1:].T.copy(), header[1:]
