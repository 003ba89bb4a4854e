"""Order-k equation matching problems and their LASSO solutions.

For equation ``i`` of an order-``K`` system, order-``k`` matching regresses

    response = Theta @ theta + Phi_k @ alpha,    theta = (-omega_i, beta_i)

over quadrature nodes.  ``k = 0`` is gradient matching (SINDy): the response
is ``d^K X_i`` and there is no ``alpha``.  ``k = K`` is the derivative-free
form: the response is ``X_i`` itself, the operator columns are
``int G^{K-l} X_i`` and the driving columns ``int G^K H(X)``.

The loss is ``sum_j w_j r_j^2 + lam * sum_j s_j |theta_j|`` where ``w`` are
quadrature weights and ``s_j`` is the weighted norm of column ``j`` after
projecting out the ``Phi_k`` block.  ``alpha`` is unpenalised and is
eliminated exactly by that projection.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from numba import njit

from .basis import BasisLibrary
from .exceptions import CapabilityError, OrderError, ShapeError
from .greens import GreensKernel, QuadratureRule, null_basis, transform_nodes, trapezoid_rule

CD_TOL = 1e-9
CD_MAX_SWEEPS = 10_000
SNAP = 1e-12
NEWTON_AFTER = 5
N_LAMBDAS = 50
LAMBDA_RATIO = 1e-4


@dataclass
class MatchingProblem:
    i: int
    K: int
    k: int
    nodes: np.ndarray
    response: np.ndarray
    theta_block: np.ndarray
    alpha_block: np.ndarray
    weights: np.ndarray
    column_labels: List[str]
    quad_weights: Optional[np.ndarray] = None
    # kernel order applied to each theta column (0: none) and the integrand it
    # was applied to; used to rebuild the problem under perturbed kernels
    column_orders: Optional[np.ndarray] = None
    integrands: Optional[np.ndarray] = None

    def __post_init__(self):
        N = self.nodes.size
        if self.response.shape != (N,) or self.theta_block.shape[0] != N or self.weights.shape != (N,):
            raise ShapeError("problem blocks must share the node count")
        if self.alpha_block.shape[0] != N:
            raise ShapeError("alpha block must share the node count")
        if self.quad_weights is None:
            self.quad_weights = self.weights

    @property
    def n_theta(self):
        return self.theta_block.shape[1]

    @property
    def n_alpha(self):
        return self.alpha_block.shape[1]

    def residual(self, theta, alpha):
        r = self.response - self.theta_block @ theta
        if self.n_alpha:
            r = r - self.alpha_block @ alpha
        return r


@dataclass
class SparseSolution:
    equation_index: int
    K: int
    k: int
    theta: np.ndarray
    alpha: np.ndarray
    lam: float
    objective: float
    labels: List[str] = field(default_factory=list)
    cv_errors: Optional[np.ndarray] = None
    lambda_grid: Optional[np.ndarray] = None

    @property
    def support(self):
        return np.flatnonzero(self.theta != 0)

    @property
    def omega(self):
        return -self.theta[: self.K - 1]

    @property
    def beta(self):
        return self.theta[self.K - 1 :]

    def to_dict(self):
        return {
            "equation_index": int(self.equation_index),
            "K": int(self.K),
            "k": int(self.k),
            "lambda": float(self.lam),
            "omega": [float(v) for v in self.omega],
            "beta": [{"label": lab, "value": float(v)} for lab, v in zip(self.labels[self.K - 1 :], self.beta)],
            "alpha": [float(v) for v in self.alpha],
            "objective": float(self.objective),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d):
        K = int(d["K"])
        omega = np.asarray(d["omega"], dtype=float)
        beta = np.array([b["value"] for b in d["beta"]], dtype=float)
        labels = [f"d{l}(x{int(d['equation_index']) + 1})" for l in range(1, K)] + [b["label"] for b in d["beta"]]
        return cls(
            int(d["equation_index"]),
            K,
            int(d["k"]),
            np.concatenate([-omega, beta]),
            np.asarray(d["alpha"], dtype=float),
            float(d["lambda"]),
            float(d["objective"]),
            labels,
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# problem assembly


def required_derivative_order(K, k):
    return max(K - k, 0)


class MatchingDesign:
    """Shared per-dataset quantities (states, features, transforms) for building problems."""

    def __init__(self, curves, lib: BasisLibrary, K, k, rule: QuadratureRule, kernels=None, node_weight=None):
        if k < 0:
            raise OrderError("matching order must be >= 0")
        need = required_derivative_order(K, k)
        if need > curves.max_order:
            raise CapabilityError(
                f"order-{k} matching of an order-{K} system needs derivative order {need}; "
                f"curves provide up to {curves.max_order}"
            )
        self.curves, self.lib, self.K, self.k, self.rule = curves, lib, K, k, rule
        self.kernels = dict(kernels or {})
        t = rule.nodes
        self.X = curves.evaluate(0, t)
        if self.X.shape[0] != lib.p:
            raise ShapeError(f"library expects {lib.p} variables, curves have {self.X.shape[0]}")
        self.H = lib.evaluate(self.X, t)
        self._derivs = {0: self.X}
        self.weights = rule.weights * (1.0 if node_weight is None else np.asarray(node_weight(t), dtype=float))
        self.H_transformed = self.transform(k, self.H)
        self.alpha_block = null_basis(k, t).T if k > 0 else np.zeros((t.size, 0))

    def kernel(self, order):
        return self.kernels.get(order, GreensKernel(order))

    def transform(self, order, samples):
        return transform_nodes(self.kernel(order), samples, self.rule)

    def derivative(self, order):
        if order not in self._derivs:
            self._derivs[order] = self.curves.evaluate(order, self.rule.nodes)
        return self._derivs[order]

    def problem(self, i) -> MatchingProblem:
        K, k = self.K, self.k
        xi = self.X[i]
        cols, labels, orders, integrands = [], [], [], []
        for l in range(1, K):
            labels.append(f"d{l}(x{i + 1})")
            if l > k:
                cols.append(self.derivative(l - k)[i])
                orders.append(0)
                integrands.append(np.zeros_like(xi))
            else:
                cols.append(self.transform(k - l, xi))
                orders.append(k - l)
                integrands.append(xi)
        if k < K:
            response = self.derivative(K - k)[i]
        else:
            response = self.transform(k - K, xi)
        theta_block = np.column_stack(cols + [self.H_transformed.T]) if cols else self.H_transformed.T.copy()
        orders = np.array(orders + [k] * self.lib.D, dtype=int)
        integrands = np.column_stack(integrands + [self.H.T]) if integrands else self.H.T.copy()
        return MatchingProblem(
            i=i,
            K=K,
            k=k,
            nodes=self.rule.nodes,
            response=np.asarray(response, dtype=float),
            theta_block=np.ascontiguousarray(theta_block),
            alpha_block=self.alpha_block,
            weights=self.weights,
            column_labels=labels + self.lib.labels,
            quad_weights=self.rule.weights,
            column_orders=orders,
            integrands=integrands,
        )


def default_rule(curves, n_nodes=None) -> QuadratureRule:
    """Trapezoid rule on the curves' domain: 4x the observation count, at least 1024 nodes."""
    lo, hi = curves.domain
    n = getattr(curves, "n_obs", None) or 256
    return trapezoid_rule(hi, n_nodes or max(4 * n, 1024), start=lo)


def build_problem(curves, lib, K, k, i, rule=None, kernels=None, node_weight=None) -> MatchingProblem:
    """Assemble the order-``k`` matching problem for equation ``i``."""
    rule = rule or default_rule(curves)
    return MatchingDesign(curves, lib, K, k, rule, kernels, node_weight).problem(i)


# ---------------------------------------------------------------------------
# LASSO


@njit(cache=True, nogil=True)
def _soft_update(G, c, half, beta, Gb, j):
    gjj = G[j, j]
    rho = c[j] - Gb[j] + gjj * beta[j]
    if rho > half:
        new = (rho - half) / gjj
    elif rho < -half:
        new = (rho + half) / gjj
    else:
        new = 0.0
    delta = new - beta[j]
    if delta != 0.0:
        beta[j] = new
        for m in range(c.size):
            Gb[m] += G[m, j] * delta
    return abs(delta)


@njit(cache=True, nogil=True)
def _cd_gram(G, c, lam, beta, active, tol, max_sweeps):
    """Cyclic coordinate descent for ``||y - X b||^2 + lam |b|_1`` given ``G = X'X, c = X'y``.

    Full sweeps alternate with sweeps over the current nonzero set; the loop
    ends when a full sweep moves no coefficient by more than ``tol``.
    """
    p = c.size
    half = 0.5 * lam
    Gb = G @ beta
    sweeps = 0
    while sweeps < max_sweeps:
        max_change = 0.0
        for j in range(p):
            if active[j]:
                max_change = max(max_change, _soft_update(G, c, half, beta, Gb, j))
        sweeps += 1
        if max_change < tol:
            return sweeps
        support = np.flatnonzero(beta)
        inner_sweeps = 0
        while sweeps < max_sweeps:
            inner = 0.0
            for j in support:
                inner = max(inner, _soft_update(G, c, half, beta, Gb, j))
            sweeps += 1
            inner_sweeps += 1
            if inner < tol:
                break
            if inner_sweeps % NEWTON_AFTER == 0 and _support_newton(G, c, half, beta, support):
                Gb[:] = G @ beta
                break
    return sweeps


@njit(cache=True, nogil=True)
def _support_newton(G, c, half, beta, support):
    """Feature-sign step: move toward the minimiser for the current signs.

    If a coordinate would change sign, stop where it reaches zero, drop it and
    re-solve.  Each step lowers the objective, so this terminates.
    """
    S = support.copy()
    while S.size > 0:
        k = S.size
        A = np.empty((k, k))
        rhs = np.empty(k)
        for a in range(k):
            rhs[a] = c[S[a]] - half * np.sign(beta[S[a]])
            for b in range(k):
                A[a, b] = G[S[a], S[b]]
        try:
            x = np.linalg.solve(A, rhs)
        except Exception:
            return False
        if not np.all(np.isfinite(x)):
            return False
        step = 1.0
        drop = -1
        for a in range(k):
            cur = beta[S[a]]
            if np.sign(x[a]) != np.sign(cur):
                t = cur / (cur - x[a])
                if t < step:
                    step = t
                    drop = a
        for a in range(k):
            beta[S[a]] += step * (x[a] - beta[S[a]])
        if drop < 0:
            return True
        beta[S[drop]] = 0.0
        keep = np.ones(k, dtype=np.bool_)
        keep[drop] = False
        S = S[keep]
    return True


class ReducedProblem:
    """Weighted problem with the ``alpha`` block projected out and columns standardised."""

    def __init__(self, problem: MatchingProblem, weights=None, scales=None):
        self.problem = problem
        w = problem.weights if weights is None else weights
        self.w = w
        sw = np.sqrt(w)
        Xw = sw[:, None] * problem.theta_block
        yw = sw * problem.response
        self.Xw, self.yw = Xw, yw
        if problem.n_alpha:
            U, s, Vt = np.linalg.svd(sw[:, None] * problem.alpha_block, full_matrices=False)
            rank = int(np.sum(s > s[0] * max(U.shape) * np.finfo(float).eps)) if s.size and s[0] > 0 else 0
            if rank < problem.n_alpha:
                warnings.warn(
                    "rank-deficient null-space block; alpha solved by minimum-norm least squares",
                    RuntimeWarning,
                    stacklevel=3,
                )
            self.U, self.s, self.Vt = U[:, :rank], s[:rank], Vt[:rank]
            Xr = Xw - self.U @ (self.U.T @ Xw)
            yr = yw - self.U @ (self.U.T @ yw)
        else:
            self.U = None
            Xr, yr = Xw, yw
        if scales is None:
            scales = np.sqrt(np.sum(Xr**2, axis=0))
            tiny = scales <= 1e-14 * max(1.0, float(scales.max(initial=0.0)))
            scales = np.where(tiny, 0.0, scales)
        self.scales = scales
        self.active = scales > 0
        safe = np.where(self.active, scales, 1.0)
        Xs = Xr / safe
        Xs[:, ~self.active] = 0.0
        self.G = np.ascontiguousarray(Xs.T @ Xs)
        self.c = Xs.T @ yr
        self.yy = float(yr @ yr)
        # inactive columns get a unit diagonal so the solver never divides by zero
        self.G[~self.active, ~self.active] = 1.0

    def lambda_max(self):
        return 2.0 * float(np.max(np.abs(self.c[self.active]), initial=0.0))

    def solve_std(self, lam, beta0=None, tol=CD_TOL, max_sweeps=CD_MAX_SWEEPS):
        beta = np.zeros(self.c.size) if beta0 is None else np.array(beta0, dtype=float)
        beta[~self.active] = 0.0
        sweeps = _cd_gram(self.G, self.c, float(lam), beta, self.active, tol, max_sweeps)
        beta[np.abs(beta) < SNAP] = 0.0
        return self._polish(beta, lam)[0], sweeps

    def _polish(self, beta, lam):
        """Solve the KKT system on the CD support; keep it only if it is a valid optimum."""
        S = np.flatnonzero(beta)
        if S.size == 0:
            ok = bool(np.all(np.abs(self.c[self.active]) <= 0.5 * lam * (1 + 1e-9) + 1e-12))
            return beta, ok
        signs = np.sign(beta[S])
        try:
            b = np.linalg.solve(self.G[np.ix_(S, S)], self.c[S] - 0.5 * lam * signs)
        except np.linalg.LinAlgError:
            return beta, False
        if not np.all(np.isfinite(b)) or np.any(np.sign(b) != signs):
            return beta, False
        out = np.zeros_like(beta)
        out[S] = b
        slack = np.abs(self.c - self.G @ out)[self.active]
        off = np.ones(beta.size, dtype=bool)
        off[S] = False
        if np.any(slack[off[self.active]] > 0.5 * lam * (1 + 1e-9) + 1e-12):
            return beta, False
        return out, True

    def to_theta(self, beta):
        return np.where(self.active, beta / np.where(self.active, self.scales, 1.0), 0.0)

    def alpha(self, theta):
        if self.U is None:
            return np.zeros(0)
        r = self.yw - self.Xw @ theta
        return self.Vt.T @ ((self.U.T @ r) / self.s)

    def objective(self, theta, alpha, lam):
        r = self.problem.residual(theta, alpha)
        return float(np.sum(self.w * r**2) + lam * np.sum(self.scales * np.abs(theta)))


def lambda_max(problem: MatchingProblem) -> float:
    """Smallest penalty at which the solution is ``theta = 0``."""
    return ReducedProblem(problem).lambda_max()


def default_lambda_grid(problem, n=N_LAMBDAS, ratio=LAMBDA_RATIO):
    """``n`` log-spaced values from ``lambda_max`` down to ``ratio * lambda_max``."""
    lmax = lambda_max(problem)
    if lmax <= 0:
        return np.zeros(1)
    return np.logspace(0.0, np.log10(ratio), n) * lmax


def _solution(problem, red, beta, lam, **extra):
    theta = red.to_theta(beta)
    alpha = red.alpha(theta)
    return SparseSolution(
        problem.i,
        problem.K,
        problem.k,
        theta,
        alpha,
        float(lam),
        red.objective(theta, alpha, lam),
        list(problem.column_labels),
        **extra,
    )


def lasso_solve(problem: MatchingProblem, lam, tol=CD_TOL, max_sweeps=CD_MAX_SWEEPS) -> SparseSolution:
    """Minimise ``sum w r^2 + lam * sum s_j |theta_j|``; ``alpha`` unpenalised."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    red = ReducedProblem(problem)
    beta, _ = red.solve_std(lam, tol=tol, max_sweeps=max_sweeps)
    return _solution(problem, red, beta, lam)


def kkt_violation(problem: MatchingProblem, solution: SparseSolution):
    """Largest KKT violation (standardised coordinates), relative to ``lam`` where ``lam > 0``."""
    red = ReducedProblem(problem)
    beta = solution.theta * red.scales
    grad = -2.0 * (red.c - red.G @ beta)
    lam = solution.lam
    viol = 0.0
    for j in np.flatnonzero(red.active):
        if beta[j] != 0:
            viol = max(viol, abs(grad[j] + lam * np.sign(beta[j])))
        else:
            viol = max(viol, abs(grad[j]) - lam)
    alpha_grad = 0.0
    if problem.n_alpha:
        r = problem.residual(solution.theta, solution.alpha)
        alpha_grad = float(np.max(np.abs(problem.alpha_block.T @ (problem.weights * r))))
    return viol / lam if lam > 0 else viol, alpha_grad


def fold_labels(nodes, n_folds):
    """Contiguous equal-length time blocks over ``[nodes[0], nodes[-1]]``."""
    edges = np.linspace(nodes[0], nodes[-1], n_folds + 1)
    return np.clip(np.searchsorted(edges, nodes, side="right") - 1, 0, n_folds - 1)


def cv_errors(problem: MatchingProblem, lambda_grid, n_folds=10, scales=None):
    """Held-out weighted squared residual per (fold, lambda)."""
    if problem.nodes.size < 2 * n_folds:
        raise ShapeError(f"need at least {2 * n_folds} nodes for {n_folds} folds")
    folds = fold_labels(problem.nodes, n_folds)
    counts = np.bincount(folds, minlength=n_folds)
    if np.any(counts == 0):
        raise ShapeError("a cross-validation fold contains no nodes")
    if scales is None:
        scales = ReducedProblem(problem).scales
    errs = np.zeros((n_folds, len(lambda_grid)))
    for f in range(n_folds):
        held = folds == f
        red = ReducedProblem(problem, problem.weights * ~held, scales=scales)
        beta = np.zeros(problem.n_theta)
        for a, lam in enumerate(lambda_grid):
            beta, _ = red.solve_std(lam, beta)
            theta = red.to_theta(beta)
            r = problem.residual(theta, red.alpha(theta))
            errs[f, a] = float(np.sum(problem.weights[held] * r[held] ** 2))
    return errs


def cv_select_lambda(problem: MatchingProblem, n_folds=10, lambda_grid=None, n_lambdas=N_LAMBDAS,
                     lambda_ratio=LAMBDA_RATIO):
    """Time-blocked CV over ``lambda_grid``; ties go to the larger lambda; refit on all nodes.

    Without a grid, ``n_lambdas`` log-spaced values from ``lambda_max`` down to
    ``lambda_ratio * lambda_max`` are used.
    """
    red = ReducedProblem(problem)
    if lambda_grid is None:
        lmax = red.lambda_max()
        lambda_grid = np.logspace(0.0, np.log10(lambda_ratio), n_lambdas) * lmax if lmax > 0 else np.zeros(1)
    grid = np.sort(np.asarray(lambda_grid, dtype=float).ravel())[::-1]
    if grid.size == 1:
        errs = None
        best = 0
    else:
        errs = cv_errors(problem, grid, n_folds, red.scales)
        best = int(np.argmin(errs.mean(axis=0)))
    # warm-start the full-data fit along the grid for speed and path consistency
    beta = np.zeros(problem.n_theta)
    for lam in grid[: best + 1]:
        beta, _ = red.solve_std(lam, beta)
    sol = _solution(
        problem,
        red,
        beta,
        grid[best],
        cv_errors=None if errs is None else errs.mean(axis=0),
        lambda_grid=grid,
    )
    return float(grid[best]), sol


def fit_equations(
    curves, lib, K, k, lambda_grid=None, rule=None, n_folds=10, equations=None, n_jobs=1, kernels=None,
    n_lambdas=N_LAMBDAS, lambda_ratio=LAMBDA_RATIO,
) -> List[SparseSolution]:
    """Order-``k`` matching with CV-tuned LASSO for each equation (independent across ``i``)."""
    rule = rule or default_rule(curves)
    design = MatchingDesign(curves, lib, K, k, rule, kernels)
    equations = range(curves.p) if equations is None else equations

    def one(i):
        return cv_select_lambda(design.problem(i), n_folds, lambda_grid, n_lambdas, lambda_ratio)[1]

    if n_jobs == 1:
        return [one(i) for i in equations]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs, prefer="threads")(delayed(one)(i) for i in equations)


def fit_sem(curves, lib, K, lambda_grid=None, rule=None, n_folds=10, n_jobs=1, **kw):
    """Derivative-free sparse equation matching (order ``k = K``)."""
    return fit_equations(curves, lib, K, K, lambda_grid, rule, n_folds, n_jobs=n_jobs, **kw)


def fit_sindy(curves, lib, K, lambda_grid=None, rule=None, n_folds=10, n_jobs=1, **kw):
    """Gradient matching baseline (order ``k = 0``)."""
    return fit_equations(curves, lib, K, 0, lambda_grid, rule, n_folds, n_jobs=n_jobs, **kw)


# ---------------------------------------------------------------------------
# invariance under the choice of Green's function


def _perturbation_moments(problem, v_functions):
    """Per theta column: ``int v_m(s) g_j(s) ds`` padded to length ``k``."""
    k = problem.k
    N = problem.nodes.size
    moments = np.zeros((problem.n_theta, k))
    for j, m in enumerate(problem.column_orders):
        if m == 0:
            continue
        v = v_functions(m, problem.nodes) if callable(v_functions) else v_functions[m]
        v = np.atleast_2d(np.asarray(v, dtype=float))
        if v.shape != (m, N):
            raise ShapeError(f"v_{m} must have shape ({m}, {N})")
        moments[j, :m] = v @ (problem.quad_weights * problem.integrands[:, j])
    return moments


def perturb_problem(problem: MatchingProblem, v_functions) -> MatchingProblem:
    """Problem rebuilt with kernels ``G^m + Phi_m(t)' v_m(s)``."""
    moments = _perturbation_moments(problem, v_functions)
    theta_block = problem.theta_block + problem.alpha_block @ moments.T
    return MatchingProblem(
        problem.i,
        problem.K,
        problem.k,
        problem.nodes,
        problem.response,
        theta_block,
        problem.alpha_block,
        problem.weights,
        list(problem.column_labels),
        problem.quad_weights,
        problem.column_orders,
        problem.integrands,
    ), moments


def invariance_check(problem: MatchingProblem, v_functions, lam=None, tol=1e-12):
    """Solve with canonical and perturbed kernels at the same lambda and compare.

    ``alpha_residual`` measures how well the canonical ``alpha`` is recovered
    from the perturbed one by ``alpha = alpha~ + sum_j theta~_j m_j`` where
    ``m_j`` are the column moments of the perturbation.
    """
    if problem.k != problem.K or problem.column_orders is None:
        raise OrderError("invariance check needs an order-K problem with stored integrands")
    perturbed, moments = perturb_problem(problem, v_functions)
    if lam is None:
        lam = 0.01 * lambda_max(problem)
    canon = lasso_solve(problem, lam, tol=tol)
    tilde = lasso_solve(perturbed, lam, tol=tol)
    mapped = tilde.alpha + moments.T @ tilde.theta
    return {
        "lambda": float(lam),
        "theta_gap": float(np.max(np.abs(canon.theta - tilde.theta), initial=0.0)),
        "alpha_residual": float(np.max(np.abs(canon.alpha - mapped), initial=0.0)),
        "canonical": canon,
        "perturbed": tilde,
    }
