"""Acceptance criteria 1-11; each test prints one PASS/FAIL line."""
import json
import time

import numpy as np
import pytest

from oracles import lasso_objective, penalty_scales, sign_enumeration
from semlearn import cli
from semlearn.basis import BasisLibrary
from semlearn.evaluation import angular_deviation, average_field, vector_field
from semlearn.experiments import pendulum_initial_state, run_replicates
from semlearn.greens import GreensKernel, QuadratureRule, greens_value, null_basis, transform_nodes, trapezoid_rule
from semlearn.inference import bh_adjust, binomial_test, fisher_exact_one_sided
from semlearn.matching import (
    MatchingProblem,
    SparseSolution,
    build_problem,
    invariance_check,
    kkt_violation,
    lambda_max,
    lasso_solve,
)
from semlearn.smoothing import SampledCurves
from semlearn.systems import integrate, pendulum_system, uniform_grid
from test_inference import bh_scan, binomial_tail, fisher_enumeration

RESULTS = {}
S_PENDULUM = 100


def record(n, ok, detail):
    line = f"C{n} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def _pendulum_problem(seed):
    sys = pendulum_system()
    traj = integrate(sys, pendulum_initial_state(seed), uniform_grid(20.0, 2001))
    curves = SampledCurves.from_trajectory(traj)
    return sys, build_problem(curves, sys.library, 2, 2, 0, QuadratureRule.from_nodes(traj.times))


def test_c01_integral_form_equivalence():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        sys, prob = _pendulum_problem(seed)
        r = prob.response - prob.theta_block @ sys.true_coef[0]
        sw = np.sqrt(prob.weights)
        Pw = sw[:, None] * prob.alpha_block
        rw = sw * r
        rw = rw - Pw @ np.linalg.lstsq(Pw, rw, rcond=None)[0]
        worst = max(worst, np.linalg.norm(rw) / np.linalg.norm(sw * prob.response))
    elapsed = time.perf_counter() - start
    record(1, worst < 1e-3 and elapsed < 5, f"max relative residual {worst:.2e} (< 1e-3), {elapsed:.1f}s (< 5s)")


def test_c02_kernel_choice_invariance():
    start = time.perf_counter()
    _, prob = _pendulum_problem(0)
    lam = 0.01 * lambda_max(prob)
    rng = np.random.default_rng(2024)
    gaps, resids = [], []
    for _ in range(20):
        coefs = {m: rng.uniform(-5, 5, (m, 3)) for m in (1, 2)}

        def v(m, nodes, coefs=coefs):
            return np.array([np.polyval(c, nodes) for c in coefs[m]])

        rep = invariance_check(prob, v, lam=lam)
        gaps.append(rep["theta_gap"])
        resids.append(rep["alpha_residual"])
    elapsed = time.perf_counter() - start
    ok = max(gaps) < 1e-6 and max(resids) < 1e-6 and elapsed < 30
    record(2, ok, f"max theta gap {max(gaps):.1e}, max alpha-map residual {max(resids):.1e} (< 1e-6), {elapsed:.1f}s")


def test_c03_lasso_correctness():
    rng = np.random.default_rng(7)
    worst_obj, worst_kkt = 0.0, 0.0
    for _ in range(200):
        d = int(rng.integers(1, 7))
        n = int(rng.integers(15, 60))
        K = int(rng.integers(0, 3))
        t = np.sort(rng.uniform(0, 2, n))
        X = rng.normal(size=(n, d)) * rng.uniform(0.1, 10, d)
        y = X @ (rng.normal(size=d) * (rng.uniform(size=d) < 0.6)) + rng.normal(size=n)
        w = rng.uniform(0.2, 2.0, n)
        Phi = null_basis(K, t).T if K else np.zeros((n, 0))
        prob = MatchingProblem(0, max(K, 1), K, t, y, X, Phi, w, [f"c{j}" for j in range(d)])
        lam = lambda_max(prob) * rng.uniform(0.001, 1.2)
        sol = lasso_solve(prob, lam)
        scales = penalty_scales(X, Phi, w)
        obj = lasso_objective(X, Phi, y, w, lam, scales, sol.theta, sol.alpha)
        ref = sign_enumeration(X, Phi, y, w, lam, scales)[0]
        worst_obj = max(worst_obj, abs(obj - ref) / max(1.0, abs(ref)))
        viol, agrad = kkt_violation(prob, sol)
        worst_kkt = max(worst_kkt, viol)
    ok = worst_obj < 1e-6 and worst_kkt < 1e-6
    record(3, ok, f"max objective gap {worst_obj:.1e}, max KKT violation {worst_kkt:.1e} over 200 problems")


def test_c04_greens_identities():
    rule = trapezoid_rule(3.0, 2001)
    t = rule.nodes
    worst_red = 0.0
    for k in range(1, 5):
        derivs = [np.exp(0.5 * t) * 0.5**l + np.sin(2 * t + l * np.pi / 2) * 2.0**l for l in range(k + 1)]
        Phi = null_basis(k, t).T
        for l in range(k + 1):
            lhs = transform_nodes(GreensKernel(k), derivs[l], rule)
            target = derivs[0] if l == k else transform_nodes(GreensKernel(k - l), derivs[0], rule)
            diff = lhs - target
            resid = diff - Phi @ np.linalg.lstsq(Phi, diff, rcond=None)[0]
            worst_red = max(worst_red, np.linalg.norm(resid) / np.linalg.norm(target))
    rule2 = trapezoid_rule(2.0, 2001)
    worst_semi = 0.0
    for a in (1, 2):
        for b in (1, 2):
            for tt, s in [(2.0, 0.0), (1.5, 0.3), (1.9, 1.1), (1.0, 0.25)]:
                lhs = np.sum(rule2.weights * greens_value(GreensKernel(a), tt, rule2.nodes)
                             * greens_value(GreensKernel(b), rule2.nodes, s))
                rhs = greens_value(GreensKernel(a + b), tt, s)
                worst_semi = max(worst_semi, abs(lhs - rhs) / abs(rhs))
    ok = worst_red < 1e-3 and worst_semi < 5e-3
    record(4, ok, f"reduction residual {worst_red:.1e} (< 1e-3), semigroup error {worst_semi:.1e} (< 5e-3)")


@pytest.fixture(scope="module")
def pendulum_runs(tmp_path_factory):
    args = ["discover", "--system", "pendulum", "--n", "150", "--gamma", "0.05",
            "--replicates", str(S_PENDULUM), "--seed", "0", "--methods", "sem", "sindy"]
    outs, times = [], []
    for name in ("run1", "run2"):
        out = tmp_path_factory.mktemp(name)
        start = time.perf_counter()
        assert cli.main(args + ["--output", str(out)]) == 0
        times.append(time.perf_counter() - start)
        outs.append(out)
    return outs, times


def test_c05_pendulum_study(pendulum_runs):
    (out, _), (elapsed, _) = pendulum_runs
    metrics = json.loads((out / "metrics.json").read_text())
    sem = np.array([r["sem"]["rer"] for r in metrics["replicates"]])
    sindy = np.array([r["sindy"]["rer"] for r in metrics["replicates"]])
    wins = int(np.sum(sem < sindy))
    trials = int(np.sum(sem != sindy))
    pval = binomial_test(wins, trials)
    ok = sem.mean() < sindy.mean() and pval < 0.01 and elapsed < 600
    record(5, ok, f"mean RER SEM {sem.mean():.4f} vs SINDy {sindy.mean():.4f}; SEM better in {wins}/{trials}, "
                  f"sign test p = {pval:.1e} (< 0.01); {elapsed:.0f}s")


def test_c06_noiseless_support():
    reps = run_replicates("discovery", range(100), system="pendulum", n=150, gamma=0.0, methods=("sem",),
                          with_models=True)
    hits = 0
    for r in reps:
        sol = SparseSolution.from_dict(r["sem"]["models"][0])
        hits += sol.support.tolist() == [2]  # theta = (d1(x1), 1, sin(x1), ...)
    record(6, hits >= 95, f"support exactly {{sin x1}} in {hits}/100 seeds (>= 95)")


def test_c07_ddm_study():
    start = time.perf_counter()
    reps = run_replicates("ddm", range(20), n=150, gamma=0.05, methods=("sem", "sindy"))
    elapsed = time.perf_counter() - start
    ma_sem = float(np.mean([r["sem"]["ma"] for r in reps]))
    ma_sindy = float(np.mean([r["sindy"]["ma"] for r in reps]))
    ok = ma_sem > ma_sindy and ma_sem >= 0.9 and elapsed < 1800
    record(7, ok, f"MA SEM {ma_sem:.3f} vs SINDy {ma_sindy:.3f} (SEM > SINDy and SEM >= 0.9); {elapsed:.0f}s")


def _models(directory):
    lib = BasisLibrary.from_json((directory / "library.json").read_text())
    return lib, [SparseSolution.from_json((directory / "eq000.json").read_text())]


def test_c08_vector_field(pendulum_runs):
    (out, _), _ = pendulum_runs
    truth = vector_field(pendulum_system())
    dev = {}
    for m in ("sem", "sindy"):
        fields = []
        for r in range(S_PENDULUM):
            lib, sols = _models(out / "models" / m / f"rep{r:03d}")
            fields.append(vector_field(sols, lib=lib, K=2))
        dev[m] = angular_deviation(average_field(fields), truth)
    ok = dev["sem"] < dev["sindy"]
    record(8, ok, f"averaged-field angular deviation SEM {dev['sem']:.3f} vs SINDy {dev['sindy']:.3f} rad "
                  f"on [-0.5, 0.5]^2")


def test_c09_prediction():
    reps = run_replicates("prediction", range(10))
    wins = sum(r["sem"]["rpe"] < r["sindy"]["rpe"] for r in reps)
    record(9, wins >= 8, f"RPE SEM < SINDy on {wins}/10 seeds (>= 8)")


def test_c10_inference_oracles():
    fisher_bad = 0
    for a in range(13):
        for b in range(13 - a):
            for c in range(13):
                for d in range(13 - c):
                    if fisher_exact_one_sided(a, b, c, d) != pytest.approx(fisher_enumeration(a, b, c, d),
                                                                            rel=1e-12, abs=1e-15):
                        fisher_bad += 1
    rng = np.random.default_rng(10)
    bh_bad = 0
    for _ in range(1000):
        p = rng.uniform(size=int(rng.integers(1, 50))) ** rng.uniform(0.3, 5)
        bh_bad += set(np.flatnonzero(bh_adjust(p))) != bh_scan(list(p), 0.05)
    binom_err = max(abs(binomial_test(s, n, p0) - binomial_tail(s, n, p0))
                    for n in range(1, 61) for s in range(n + 1) for p0 in (0.1, 0.5, 0.8))
    ok = fisher_bad == 0 and bh_bad == 0 and binom_err < 1e-12
    record(10, ok, f"Fisher mismatches {fisher_bad}, BH mismatches {bh_bad}/1000, "
                   f"binomial max error {binom_err:.1e}")


def test_c11_determinism(pendulum_runs):
    (a, b), _ = pendulum_runs
    same = (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
    record(11, same, "repeated pendulum-study command gives byte-identical metrics.json" if same
           else "metrics.json differs between identical runs")
