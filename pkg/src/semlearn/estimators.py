"""scikit-learn style estimators for equation discovery."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .basis import poly_trig_library
from .evaluation import adjacency_from_solutions, solutions_to_system
from .exceptions import ConfigurationError, ShapeError
from .matching import default_rule, fit_equations
from .smoothing import smooth_observations
from .systems import SimulationGrid, integrate


class SparseEquationMatching(RegressorMixin, BaseEstimator):
    """Sparse equation matching for an order-``order`` system.

    ``fit(X, t=times)`` takes noisy observations ``X`` of shape
    ``(n_samples, p)``, smooths each column, then solves one LASSO matching
    problem per equation.  ``matching_order=None`` means ``k = order``
    (derivative-free); ``0`` gives the gradient-matching baseline.

    ``predict`` maps states ``[x_1..x_p, dx_1..dx_p, ...]`` (``order * p``
    columns) to the highest derivative.
    """

    def __init__(self, order=2, degree=1, include_trig=False, include_time=False, matching_order=None, q=None,
                 nu=None, n_folds=10, lambda_grid=None, n_nodes=None, n_jobs=1, library=None):
        self.order = order
        self.degree = degree
        self.include_trig = include_trig
        self.include_time = include_time
        self.matching_order = matching_order
        self.q = q
        self.nu = nu
        self.n_folds = n_folds
        self.lambda_grid = lambda_grid
        self.n_nodes = n_nodes
        self.n_jobs = n_jobs
        self.library = library

    def _k(self):
        return self.order if self.matching_order is None else self.matching_order

    def fit(self, X, y=None, t=None):
        X = check_array(X, ensure_min_samples=2)
        if t is None:
            raise ConfigurationError("observation times t are required")
        t = np.asarray(t, dtype=float).ravel()
        if t.size != X.shape[0]:
            raise ShapeError("t must have one entry per row of X")
        q = self.q if self.q is not None else self.order
        curves = smooth_observations(X.T, t, q=q, nu=self.nu, domain=(float(t[0]), float(t[-1])))
        return self.fit_curves(curves)

    def fit_curves(self, curves):
        """Fit from pre-smoothed (or exact) curves exposing ``evaluate(order, t)``."""
        if self.order < 1:
            raise ConfigurationError("order must be >= 1")
        lib = self.library or poly_trig_library(curves.p, self.degree, self.include_trig, self.include_time)
        rule = default_rule(curves, self.n_nodes)
        sols = fit_equations(curves, lib, self.order, self._k(), self.lambda_grid, rule, self.n_folds,
                             n_jobs=self.n_jobs)
        self.curves_ = curves
        self.library_ = lib
        self.solutions_ = sols
        self.coef_ = np.vstack([s.theta for s in sols])
        self.alpha_ = [s.alpha for s in sols]
        self.lambdas_ = np.array([s.lam for s in sols])
        self.system_ = solutions_to_system(sols, lib, self.order)
        self.n_features_in_ = curves.p
        return self

    @property
    def omega_(self):
        check_is_fitted(self, "coef_")
        return -self.coef_[:, : self.order - 1]

    @property
    def beta_(self):
        check_is_fitted(self, "coef_")
        return self.coef_[:, self.order - 1 :]

    @property
    def adjacency_(self):
        check_is_fitted(self, "solutions_")
        return adjacency_from_solutions(self.solutions_, self.library_, self.order)

    def predict(self, X, t=0.0):
        check_is_fitted(self, "system_")
        p, K = self.n_features_in_, self.order
        X = check_array(X)
        if X.shape[1] != p * K:
            raise ShapeError(f"expected {p * K} state columns, got {X.shape[1]}")
        state = X.T.reshape(K, p, X.shape[0])
        return self.system_.acceleration(state, t).T

    def simulate(self, init, t):
        """Integrate the discovered system from ``init`` (length ``order * p``) over times ``t``."""
        check_is_fitted(self, "system_")
        t = np.asarray(t, dtype=float)
        traj = integrate(self.system_, init, SimulationGrid(float(t[-1]), t))
        return traj.values.T

    def equations(self, precision=4):
        """Readable right-hand sides, one string per equation."""
        check_is_fitted(self, "solutions_")
        out = []
        for sol in self.solutions_:
            terms = [f"{v:.{precision}g}*{lab}" for v, lab in zip(sol.theta, sol.labels) if v != 0]
            out.append(f"d{self.order}(x{sol.equation_index + 1}) = " + (" + ".join(terms) if terms else "0"))
        return out


class SINDy(SparseEquationMatching):
    """Gradient-matching baseline (order-0 matching on smoothed derivatives)."""

    def __init__(self, order=2, degree=1, include_trig=False, include_time=False, q=None, nu=None, n_folds=10,
                 lambda_grid=None, n_nodes=None, n_jobs=1, library=None):
        super().__init__(order=order, degree=degree, include_trig=include_trig, include_time=include_time,
                         matching_order=0, q=q, nu=nu, n_folds=n_folds, lambda_grid=lambda_grid, n_nodes=n_nodes,
                         n_jobs=n_jobs, library=library)

    def _k(self):
        return 0
