"""Replicated simulation studies with paired seeds.

Each replicate draws its initial condition and noise from one seed, smooths
once, then fits every requested method on the same smoothed curves.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from functools import partial

import numpy as np

from .evaluation import (
    adjacency_from_solutions,
    mean_accuracy,
    one_step_predictions,
    rer,
    rpe,
    solutions_to_system,
    true_adjacency,
    vector_field,
)
from .exceptions import ConfigurationError, ReplicateError, SEMError
from .greens import trapezoid_rule
from .matching import fit_equations
from .smoothing import smooth_observations
from .systems import (
    add_noise,
    coupled_oscillators,
    ddm_initial_state,
    ddm_system,
    integrate,
    pendulum_system,
    uniform_grid,
)


def matching_order(method, K):
    """``sem`` is order ``K``, ``sindy`` order 0, ``k<j>`` any explicit order ``j``."""
    if method == "sem":
        return K
    if method == "sindy":
        return 0
    if method.startswith("k") and method[1:].isdigit():
        return int(method[1:])
    raise ConfigurationError(f"unknown method {method!r}; expected 'sem', 'sindy' or 'k<order>'")


def _seed_streams(seed):
    init_ss, noise_ss = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(noise_ss)


def _noisy(system, init, c, n, gamma, noise_rng):
    grid = uniform_grid(c, n)
    traj = integrate(system, init, grid)
    obs = add_noise(traj, gamma, noise_rng)
    return traj, obs


def _fit_methods(curves, lib, K, methods, fit_options, rule=None):
    opts = dict(fit_options or {})
    return {m: fit_equations(curves, lib, K, matching_order(m, K), rule=rule, **opts) for m in methods}


def pendulum_initial_state(seed):
    """Initial (position, velocity) drawn uniformly from ``[-0.5, 0.5]^2``."""
    return _seed_streams(seed)[0].uniform(-0.5, 0.5, 2)


def simulate_replicate(system_name, seed, n, gamma, c=None, tau1=None, tau2=None):
    """Trajectory and noisy observations for one replicate of a benchmark system."""
    system, c, init = benchmark(system_name, seed, c, tau1, tau2)
    _, noise_rng = _seed_streams(seed)
    traj, obs = _noisy(system, init, c, n, gamma, noise_rng)
    return system, traj, obs


def benchmark(system_name, seed, c=None, tau1=None, tau2=None):
    """``(system, horizon, initial state)`` for a named benchmark."""
    if system_name == "pendulum":
        return pendulum_system(), c or 20.0, pendulum_initial_state(seed)
    if system_name == "ddm":
        return ddm_system(tau1, tau2), c or 5.0, ddm_initial_state()
    if system_name == "oscillators":
        return coupled_oscillators(), c or 5.0, _seed_streams(seed)[0].uniform(-1.0, 1.0, (2, 6))
    raise ValueError(f"unknown system {system_name!r}")


def state_box_sample(traj, m=1024, seed=0):
    """``m`` states drawn uniformly (fixed seed) from the box spanned by the trajectory."""
    states = traj.derivatives[:-1]
    lo = states.min(axis=2, keepdims=True)
    hi = states.max(axis=2, keepdims=True)
    u = np.random.default_rng(seed).uniform(size=states.shape[:2] + (m,))
    return lo + (hi - lo) * u


def _records(system, traj, fits, rer_sample, with_models):
    states = traj.derivatives[:-1] if rer_sample == "trajectory" else state_box_sample(traj)
    out = {}
    for m, sols in fits.items():
        rec = {"rer": rer(sols, system, system.library, states), "lambda": [s.lam for s in sols]}
        if system.p > 1:
            est = adjacency_from_solutions(sols, system.library, system.K)
            rec["ma"] = mean_accuracy(est, true_adjacency(system))
            rec["n_edges"] = int(est.sum())
        if with_models:
            rec["models"] = [s.to_dict() for s in sols]
        out[m] = rec
    return out


def discovery_replicate(seed, system="pendulum", n=150, gamma=0.05, c=None, methods=("sem", "sindy"), q=2,
                        fit_options=None, rer_sample="trajectory", with_models=False, field=False,
                        tau1=None, tau2=None):
    """Simulate, smooth once, fit each method on the same curves, score against the truth."""
    sysobj, traj, obs = simulate_replicate(system, seed, n, gamma, c, tau1, tau2)
    c = traj.grid.c
    curves = smooth_observations(obs.y, obs.times, q=q, domain=(0.0, c))
    fits = _fit_methods(curves, sysobj.library, sysobj.K, methods, fit_options)
    out = {"seed": int(seed)}
    out.update(_records(sysobj, traj, fits, rer_sample, with_models))
    if field:
        for m, sols in fits.items():
            out[m]["field"] = vector_field(sols, lib=sysobj.library, K=sysobj.K).arrows[:, 1].tolist()
    return out


def pendulum_replicate(seed, **kwargs):
    kwargs.setdefault("field", True)
    return discovery_replicate(seed, system="pendulum", **kwargs)


def ddm_replicate(seed, **kwargs):
    return discovery_replicate(seed, system="ddm", **kwargs)


def prediction_replicate(seed, p=6, n=321, gamma=0.05, c=5.0, train_end=4.0, dt=0.015625, n_val=512,
                         methods=("sem", "sindy"), q=2, fit_options=None):
    """One-step-ahead RPE on ``[train_end, c]`` for models trained on ``[0, train_end)``."""
    system = coupled_oscillators(p=p)
    init_rng, noise_rng = _seed_streams(seed)
    init = init_rng.uniform(-1.0, 1.0, (2, p))
    _, obs = _noisy(system, init, c, n, gamma, noise_rng)
    curves = smooth_observations(obs.y, obs.times, q=q, domain=(0.0, c))
    n_nodes = max(4 * int(np.sum(obs.times < train_end)), 1024)
    rule = trapezoid_rule(train_end, n_nodes)
    fits = _fit_methods(curves, system.library, 2, methods, fit_options, rule=rule)
    t_val = np.linspace(train_end, c, n_val)
    ref = curves.evaluate(0, t_val)
    out = {"seed": int(seed)}
    for m, sols in fits.items():
        model = solutions_to_system(sols, system.library, 2)
        pred = one_step_predictions(model, curves, t_val, dt)
        out[m] = {"rpe": rpe(pred, ref)}
    return out


STUDIES = {"discovery": discovery_replicate, "pendulum": pendulum_replicate, "ddm": ddm_replicate, "prediction": prediction_replicate}


def _guarded(study, kwargs, seed):
    try:
        return study(seed, **kwargs)
    except (ConfigurationError, ValueError, KeyError) as exc:
        if isinstance(exc, SEMError) and not isinstance(exc, ConfigurationError):
            raise ReplicateError(seed, f"{type(exc).__name__}: {exc}", numeric=True) from exc
        raise ReplicateError(seed, f"{type(exc).__name__}: {exc}", numeric=False) from exc
    except (SEMError, FloatingPointError, np.linalg.LinAlgError) as exc:
        raise ReplicateError(seed, f"{type(exc).__name__}: {exc}", numeric=True) from exc


def run_replicates(study, seeds, workers=1, **kwargs):
    """Run ``study`` for each seed; results come back in seed order."""
    fn = partial(_guarded, STUDIES[study], kwargs)
    seeds = [int(s) for s in seeds]
    if workers <= 1:
        return [fn(s) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


def summarize(replicates, methods, key):
    """Mean and standard error of ``key`` per method."""
    out = {}
    for m in methods:
        vals = np.array([r[m][key] for r in replicates], dtype=float)
        se = float(np.std(vals, ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
        out[m] = {"mean": float(np.mean(vals)), "se": se, "n": int(vals.size)}
    return out
