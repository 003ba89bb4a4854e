"""Sobolev-penalised smoothing splines with GCV tuning.

The fit minimises ``(1/n) sum_j (y_j - f(t_j))^2 + nu * int (f^{(q)})^2`` over
splines of degree ``2q - 1`` with knots at the observation times.  The
natural smoothing spline (the minimiser over the whole Sobolev space) lies in
this space, so the two coincide.  With more than ``max_knots`` distinct
times the knots are thinned to quantiles, which turns the fit into a
penalised regression spline.

All channels observed on the same times share one generalised
eigendecomposition of ``(B'B, Omega)``; every ``nu`` then costs ``O(n m)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import eigh, solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import GridError, InsufficientDataError, OrderError, SelectionError, ShapeError

MAX_KNOTS = 1500
# log10 range of the relative GCV grid (multiplied by a data-scale normaliser)
GCV_GRID = (-10.0, 2.0, 40)


class _SplineSpace:
    def __init__(self, times, q, max_knots=MAX_KNOTS):
        self.times = times
        self.q = q
        self.k = 2 * q - 1
        n = times.size
        if max_knots is not None and n > max_knots:
            x = np.unique(np.quantile(times, np.linspace(0.0, 1.0, max_knots)))
        else:
            x = times
        self.breaks = x
        k = self.k
        self.knots = np.concatenate([np.repeat(x[0], k + 1), x[1:-1], np.repeat(x[-1], k + 1)])
        self.m = self.knots.size - k - 1
        self.B = BSpline.design_matrix(times, self.knots, k).toarray()
        self.L = self._penalty_factor()
        self.omega_raw = self.L.T @ self.L
        btb = self.B.T @ self.B
        self.ratio = np.trace(self.omega_raw) / np.trace(btb)
        omega = self.omega_raw / self.ratio
        w, V = eigh(btb, btb + omega)
        self.V = V
        # diagonal terms computed directly keep null-space directions exact
        self.d = np.clip(np.einsum("ij,ij->j", V, btb @ V), 0.0, None)
        self.e = np.clip(np.einsum("ij,ij->j", V, omega @ V), 0.0, None)
        self.F = self.B @ V

    def _penalty_factor(self):
        """Rows ``L`` with ``L'L = int (B^{(q)})' B^{(q)}``; q-point Gauss is exact here."""
        q, k = self.q, self.k
        gx, gw = np.polynomial.legendre.leggauss(q)
        a, b = self.breaks[:-1], self.breaks[1:]
        half = 0.5 * (b - a)
        pts = (0.5 * (a + b))[:, None] + half[:, None] * gx[None, :]
        wts = half[:, None] * gw[None, :]
        basis = BSpline(self.knots, np.eye(self.m), k).derivative(q)
        return np.sqrt(wts.ravel())[:, None] * basis(pts.ravel())

    def nu_scale(self):
        """Absolute ``nu`` at relative penalty 1.

        The equivalent-kernel bandwidth is about ``(nu * span)^(1/2q)``; relative
        penalty 1 is centred on ``sqrt(spacing * span)`` so the default grid
        runs from near-interpolation to near-polynomial fits.
        """
        span = self.times[-1] - self.times[0]
        h = span / (self.times.size - 1)
        return (h * span) ** self.q / span

    def direct_fit(self, y, nu):
        """Spline coefficients by QR least squares on ``[B; sqrt(mu) L]``.

        Conditioning is the square root of the normal equations', which keeps
        polynomial null-space components exact even for very large ``nu``.
        """
        if nu == 0:
            return np.linalg.lstsq(self.B, y, rcond=None)[0]
        scale = np.sqrt(self.times.size * nu)
        A = np.vstack([self.B, scale * self.L])
        rhs = np.concatenate([y, np.zeros(self.L.shape[0])])
        Q, R = np.linalg.qr(A)
        return solve_triangular(R, Q.T @ rhs)

    def mu(self, nu):
        return self.times.size * nu * self.ratio

    def solve(self, z, nu):
        """Eigen-coordinates of the fit for projected data ``z = F' y``."""
        den = self.d[:, None] + self.mu(nu) * self.e[:, None] if z.ndim == 2 else self.d + self.mu(nu) * self.e
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(den > 0, z / np.where(den > 0, den, 1.0), 0.0)
        return u

    def trace(self, nu):
        den = self.d + self.mu(nu) * self.e
        with np.errstate(divide="ignore", invalid="ignore"):
            return float(np.sum(np.where(den > 0, self.d / np.where(den > 0, den, 1.0), 0.0)))

    def hat_matrix(self, nu):
        den = self.d + self.mu(nu) * self.e
        g = np.where(den > 0, 1.0 / np.where(den > 0, den, 1.0), 0.0)
        return (self.F * g) @ self.F.T


@lru_cache(maxsize=16)
def _space_cached(key, q, max_knots):
    return _SplineSpace(np.frombuffer(key, dtype=float).copy(), q, max_knots)


def spline_space(times, q, max_knots=MAX_KNOTS):
    times = np.ascontiguousarray(times, dtype=float)
    return _space_cached(times.tobytes(), int(q), max_knots)


def _validate(times, q, n_obs=None):
    times = np.asarray(times, dtype=float).ravel()
    if q < 1:
        raise OrderError("Sobolev order q must be >= 1")
    if times.size < 2 * q:
        raise InsufficientDataError(f"need at least {2 * q} observations for q={q}, got {times.size}")
    dt = np.diff(times)
    if np.any(dt == 0):
        raise GridError("duplicate observation times")
    if np.any(dt < 0):
        raise GridError("observation times must be increasing")
    if n_obs is not None and n_obs != times.size:
        raise ShapeError("observations and times differ in length")
    return times


@dataclass
class SmoothedCurve:
    """Fitted spline; derivatives of order ``0..2q-2`` are available."""

    q: int
    knots: np.ndarray
    spline: BSpline
    nu: float

    @property
    def max_order(self):
        return 2 * self.q - 2

    def __call__(self, t):
        return self.derivative(0, t)

    def derivative(self, order, t):
        if order < 0 or order > self.max_order:
            raise OrderError(f"derivative order {order} outside 0..{self.max_order} for q={self.q}")
        t = np.asarray(t, dtype=float)
        lo, hi = self.knots[0], self.knots[-1]
        out = np.asarray(self.spline.derivative(order)(np.clip(t, lo, hi)) if order else self.spline(np.clip(t, lo, hi)))
        outside = (t < lo) | (t > hi)
        if np.any(outside):
            # natural-spline extension: degree q-1 polynomial beyond the end knots
            out = np.array(out, dtype=float, copy=True)
            for edge, mask in ((lo, t < lo), (hi, t > hi)):
                if not np.any(mask):
                    continue
                dt = t[mask] - edge
                val = np.zeros(dt.shape)
                for j in range(order, self.q):
                    dj = float(self.spline.derivative(j)(edge)) if j else float(self.spline(edge))
                    val += dj * dt ** (j - order) / factorial(j - order)
                out[mask] = val
        return out if out.ndim else float(out)


def _curve_from_space(space, y, nu):
    coef = space.direct_fit(y, nu)
    return SmoothedCurve(space.q, space.breaks, BSpline(space.knots, coef, space.k), float(nu))


def fit_smoother(y, times, q=2, nu=1e-4, max_knots=MAX_KNOTS) -> SmoothedCurve:
    """Penalised spline fit at a fixed (absolute) penalty weight ``nu >= 0``."""
    y = np.asarray(y, dtype=float).ravel()
    times = _validate(times, q, y.size)
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    return _curve_from_space(spline_space(times, q, max_knots), y, nu)


def default_nu_grid(times, q, max_knots=MAX_KNOTS):
    """40 log-spaced penalties spanning 1e-10..1e2 times the data-scale normaliser."""
    space = spline_space(_validate(times, q), q, max_knots)
    lo, hi, num = GCV_GRID
    return np.logspace(lo, hi, int(num)) * space.nu_scale()


def gcv_scores(y, times, q, nu_grid, max_knots=MAX_KNOTS):
    """GCV criterion for each ``nu`` (``nan`` where ``tr(A) >= n``)."""
    y = np.asarray(y, dtype=float).ravel()
    times = _validate(times, q, y.size)
    space = spline_space(times, q, max_knots)
    n = y.size
    z = space.F.T @ y
    scores = np.full(len(nu_grid), np.nan)
    for a, nu in enumerate(nu_grid):
        tr = space.trace(nu)
        denom = 1.0 - tr / n
        if denom <= 1e-10:
            continue
        resid = y - space.F @ space.solve(z, nu)
        scores[a] = (resid @ resid / n) / denom**2
    return scores


def gcv_select(y, times, q=2, nu_grid=None, max_knots=MAX_KNOTS):
    """Pick ``nu`` minimising GCV; ties go to the larger ``nu``."""
    if nu_grid is None:
        nu_grid = default_nu_grid(times, q, max_knots)
    nu_grid = np.asarray(nu_grid, dtype=float).ravel()
    if nu_grid.size == 0:
        raise SelectionError("empty nu grid")
    scores = gcv_scores(y, times, q, nu_grid, max_knots)
    order = np.argsort(-nu_grid, kind="stable")
    best = None
    for a in order:
        if np.isnan(scores[a]):
            continue
        if best is None or scores[a] < scores[best]:
            best = a
    if best is None:
        raise SelectionError("every nu in the grid is degenerate (tr(A) >= n)")
    nu = float(nu_grid[best])
    return nu, fit_smoother(y, times, q, nu, max_knots)


def eval_derivative(curve: SmoothedCurve, order, t):
    return curve.derivative(order, t)


class SmoothedSet:
    """``p`` smoothed channels sharing the Sobolev order and domain ``[0, C]``."""

    def __init__(self, curves, domain, n_obs=None):
        self.curves = list(curves)
        if len({c.q for c in self.curves}) > 1:
            raise ValueError("all curves must share q")
        self.domain = (float(domain[0]), float(domain[1]))
        self.n_obs = n_obs

    @property
    def p(self):
        return len(self.curves)

    @property
    def q(self):
        return self.curves[0].q

    @property
    def max_order(self):
        return self.curves[0].max_order

    @property
    def nus(self):
        return np.array([c.nu for c in self.curves])

    def evaluate(self, order, t):
        t = np.asarray(t, dtype=float)
        return np.vstack([np.atleast_1d(c.derivative(order, t)) for c in self.curves])

    def to_csv(self, path, n_points=None, max_order=1):
        """Dense export with columns ``t, x1, dx1, d2x1, ..., x2, ...``."""
        n_points = n_points or max(4 * (self.n_obs or 256), 1024)
        t = np.linspace(self.domain[0], self.domain[1], n_points)
        max_order = min(max_order, self.max_order)
        cols, header = [], []
        for i in range(self.p):
            for l in range(max_order + 1):
                cols.append(self.curves[i].derivative(l, t))
                prefix = "" if l == 0 else ("d" if l == 1 else f"d{l}")
                header.append(f"{prefix}x{i + 1}")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *header])
            for j in range(n_points):
                w.writerow([repr(float(t[j])), *(repr(float(c[j])) for c in cols)])


class SampledCurves:
    """Curves known on a grid with exact derivatives (e.g. simulated truth).

    ``derivatives`` has shape ``(L + 1, p, n)``.  Evaluation off the grid uses
    linear interpolation.
    """

    def __init__(self, times, derivatives, domain=None):
        self.times = np.asarray(times, dtype=float)
        self.derivatives = np.asarray(derivatives, dtype=float)
        self.domain = domain or (float(self.times[0]), float(self.times[-1]))
        self.n_obs = self.times.size

    @classmethod
    def from_trajectory(cls, traj):
        return cls(traj.times, traj.derivatives, (0.0, traj.grid.c))

    @property
    def p(self):
        return self.derivatives.shape[1]

    @property
    def max_order(self):
        return self.derivatives.shape[0] - 1

    def evaluate(self, order, t):
        if order < 0 or order > self.max_order:
            raise OrderError(f"derivative order {order} not available (max {self.max_order})")
        t = np.asarray(t, dtype=float)
        src = self.derivatives[order]
        if t.shape == self.times.shape and np.array_equal(t, self.times):
            return src.copy()
        return np.vstack([np.interp(t, self.times, row) for row in src])


def smooth_observations(y, times, q=2, nu=None, nu_grid=None, domain=None, max_knots=MAX_KNOTS) -> SmoothedSet:
    """Smooth each row of ``y`` (shape ``(p, n)``); GCV-tuned unless ``nu`` is given."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    times = _validate(times, q, y.shape[1])
    curves = []
    for row in y:
        if nu is None:
            curves.append(gcv_select(row, times, q, nu_grid, max_knots)[1])
        else:
            curves.append(fit_smoother(row, times, q, nu, max_knots))
    if domain is None:
        domain = (0.0, float(times[-1]))
    return SmoothedSet(curves, domain, n_obs=times.size)


class SplineSmoother(RegressorMixin, BaseEstimator):
    """sklearn regressor: ``fit(t, Y)`` smooths each column of ``Y`` over time ``t``.

    ``nu=None`` selects the penalty per channel by GCV over ``nu_grid``
    (default: 40 log-spaced values scaled to the data).
    """

    def __init__(self, q=2, nu=None, nu_grid=None, max_knots=MAX_KNOTS):
        self.q = q
        self.nu = nu
        self.nu_grid = nu_grid
        self.max_knots = max_knots

    def fit(self, X, y):
        t = np.asarray(X, dtype=float).reshape(-1)
        Y = np.asarray(y, dtype=float)
        self._single = Y.ndim == 1
        Y = Y.reshape(t.size, -1)
        self.curves_ = smooth_observations(Y.T, t, self.q, self.nu, self.nu_grid, max_knots=self.max_knots)
        self.nu_ = self.curves_.nus
        return self

    def derivative(self, X, order=1):
        check_is_fitted(self, "curves_")
        t = np.asarray(X, dtype=float).reshape(-1)
        out = self.curves_.evaluate(order, t).T
        return out[:, 0] if self._single else out

    def predict(self, X):
        return self.derivative(X, 0)
