"""Command-line runner: ``semlearn {simulate,smooth,discover,predict,infer,report}``.

Settings come from an optional TOML file (flat keys or grouped in tables) and
are overridden by ``--<field>`` flags.  Exit codes: 0 success, 2 configuration
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np
import tomli

from .basis import BasisLibrary, poly_trig_library
from .evaluation import adjacency_from_solutions, metrics_json, one_step_predictions, rpe, solutions_to_system
from .exceptions import ConfigurationError, ReplicateError, SEMError
from .experiments import discovery_replicate, matching_order, run_replicates, simulate_replicate, summarize
from .greens import trapezoid_rule
from .inference import (
    EdgeSample,
    centralities,
    edge_binomial_screen,
    edge_fisher_screen,
    refined_network,
    write_edge_list,
)
from .matching import SparseSolution, fit_equations
from .smoothing import smooth_observations
from .systems import read_csv, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SYSTEMS = ("pendulum", "ddm", "oscillators", "csv")
BASIS_DEFAULTS = {"pendulum": (4, True), "ddm": (1, False), "oscillators": (1, False), "csv": (1, False)}


@dataclass
class ExperimentConfig:
    system: str = "pendulum"
    data: str = ""
    n: int = 150
    gamma: float = 0.05
    c: float = 0.0
    K: int = 2
    q: int = 0
    degree: int = 0
    trig: str = "auto"
    time: bool = False
    methods: List[str] = field(default_factory=lambda: ["sem", "sindy"])
    k: int = -1
    lambda_n: int = 50
    lambda_ratio: float = 1e-4
    folds: int = 10
    replicates: int = 1
    seed: int = 0
    workers: int = 1
    output: str = "out"
    rer_sample: str = "trajectory"
    tau1: List[int] = field(default_factory=list)
    tau2: List[int] = field(default_factory=list)
    fit_end: float = 0.0
    models: str = ""
    baseline: str = ""
    alpha: float = 0.05
    train_end: float = 4.0
    horizon_end: float = 5.0
    dt: float = 0.015625
    n_val: int = 512

    @property
    def method_list(self):
        return [f"k{self.k}"] if self.k >= 0 else list(self.methods)

    @property
    def smoothing_order(self):
        return self.q or self.K

    def basis(self, p):
        deg, trig = BASIS_DEFAULTS[self.system]
        deg = self.degree or deg
        if self.trig != "auto":
            trig = _parse_bool(self.trig)
        return poly_trig_library(p, deg, trig, self.time)

    @property
    def fit_options(self):
        return {"n_folds": self.folds, "n_lambdas": self.lambda_n, "lambda_ratio": self.lambda_ratio}

    def validate(self, verb):
        if self.system not in SYSTEMS:
            raise ConfigurationError(f"system must be one of {SYSTEMS}")
        if self.replicates < 1:
            raise ConfigurationError("replicates must be >= 1")
        if self.n < 4 or self.gamma < 0 or self.K < 1 or self.folds < 2 or self.lambda_n < 1:
            raise ConfigurationError("need n >= 4, gamma >= 0, K >= 1, folds >= 2, lambda_n >= 1")
        if not 0 < self.lambda_ratio <= 1:
            raise ConfigurationError("lambda_ratio must lie in (0, 1]")
        if self.rer_sample not in ("trajectory", "grid"):
            raise ConfigurationError("rer_sample must be 'trajectory' or 'grid'")
        if self.trig != "auto":
            _parse_bool(self.trig)
        for m in self.method_list:
            matching_order(m, self.K)
        needs_data = verb in ("smooth", "predict") or (verb == "discover" and self.system == "csv")
        if needs_data:
            _require(self.data, "data")
        if verb in ("predict", "infer"):
            _require(self.models, "models")
        if self.baseline:
            _require(self.baseline, "baseline")
        if verb == "predict" and not self.train_end < self.horizon_end:
            raise ConfigurationError("train_end must be < horizon_end")


def _require(path, name):
    if not path:
        raise ConfigurationError(f"{name} path is required for this command")
    if not Path(path).exists():
        raise ConfigurationError(f"{name} path {path!r} does not exist")


def _parse_bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


def _flatten(table, prefix=""):
    out = {}
    for key, value in table.items():
        if isinstance(value, dict):
            out.update(_flatten(value))
        else:
            out[key] = value
    return out


def load_config(path=None, overrides=None) -> ExperimentConfig:
    values = {}
    if path:
        try:
            with open(path, "rb") as fh:
                values = _flatten(tomli.load(fh))
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file {path!r} not found") from exc
        except tomli.TOMLDecodeError as exc:
            raise ConfigurationError(f"config file {path!r}: {exc}") from exc
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    names = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(values) - set(names))
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    cfg = ExperimentConfig()
    for key, value in values.items():
        default = getattr(cfg, key)
        try:
            if isinstance(default, bool):
                value = _parse_bool(value)
            elif isinstance(default, list):
                value = list(value)
            elif isinstance(default, (int, float, str)):
                value = type(default)(value)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad value for {key}: {value!r}") from exc
        setattr(cfg, key, value)
    return cfg


def config_toml(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in dataclasses.asdict(cfg).items())


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, obj):
    Path(path).write_text(metrics_json(obj) + "\n")


def _manifest(out, cfg, files):
    _write_json(
        out / "manifest.json",
        {"config": dataclasses.asdict(cfg), "files": {Path(f).name: _sha256(f) for f in files}},
    )


def _seeds(cfg):
    return [cfg.seed + s for s in range(cfg.replicates)]


# ---------------------------------------------------------------------------
# verbs


def cmd_simulate(cfg):
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for r, seed in enumerate(_seeds(cfg)):
        system, traj, obs = simulate_replicate(cfg.system, seed, cfg.n, cfg.gamma, cfg.c or None,
                                               cfg.tau1 or None, cfg.tau2 or None)
        for name, values in (("trajectory", traj.values), ("observations", obs.y)):
            path = out / f"{name}_{r:03d}.csv"
            write_csv(path, traj.times, values)
            files.append(path)
    _manifest(out, cfg, files)
    return files


def _smooth_csv(cfg):
    times, values, names = read_csv(cfg.data)
    curves = smooth_observations(values, times, q=cfg.smoothing_order, domain=(float(times[0]), float(times[-1])))
    return times, values, names, curves


def cmd_smooth(cfg):
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    times, _, names, curves = _smooth_csv(cfg)
    curves.to_csv(out / "smoothed.csv", max_order=min(cfg.K, curves.max_order))
    _write_json(out / "smoothing.json", {"channels": names, "nu": curves.nus.tolist(), "q": curves.q})
    return out / "smoothed.csv"


def _write_models(directory, lib: BasisLibrary, sols):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "library.json").write_text(lib.to_json() + "\n")
    for sol in sols:
        (directory / f"eq{sol.equation_index:03d}.json").write_text(sol.to_json() + "\n")


def load_models(directory):
    """``(library, solutions)`` from a directory written by ``discover``."""
    directory = Path(directory)
    lib_path = directory / "library.json"
    if not lib_path.exists():
        raise ConfigurationError(f"{directory}: no library.json")
    lib = BasisLibrary.from_json(lib_path.read_text())
    sols = [SparseSolution.from_json(p.read_text()) for p in sorted(directory.glob("eq*.json"))]
    if len(sols) != lib.p:
        raise ConfigurationError(f"{directory}: expected {lib.p} equation files, found {len(sols)}")
    return lib, sols


def cmd_discover(cfg):
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    methods = cfg.method_list
    if cfg.system == "csv":
        return _discover_csv(cfg, out, methods)
    results = run_replicates(
        "discovery",
        _seeds(cfg),
        workers=cfg.workers,
        system=cfg.system,
        n=cfg.n,
        gamma=cfg.gamma,
        c=cfg.c or None,
        methods=tuple(methods),
        q=cfg.smoothing_order,
        fit_options=cfg.fit_options,
        rer_sample=cfg.rer_sample,
        with_models=True,
        tau1=cfg.tau1 or None,
        tau2=cfg.tau2 or None,
    )
    lib = None
    reps = []
    for r, res in enumerate(results):
        rec = {"seed": res["seed"]}
        for m in methods:
            sols = [SparseSolution.from_dict(d) for d in res[m].pop("models")]
            if lib is None:
                lib = _system_library(cfg)
            _write_models(out / "models" / m / f"rep{r:03d}", lib, sols)
            rec[m] = res[m]
        reps.append(rec)
    keys = ["rer"] + (["ma"] if "ma" in reps[0][methods[0]] else [])
    summary = {key: summarize(reps, methods, key) for key in keys}
    metrics = {
        "system": cfg.system,
        "n": cfg.n,
        "gamma": cfg.gamma,
        "methods": methods,
        "replicates": reps,
        "summary": summary,
    }
    _write_json(out / "metrics.json", metrics)
    _manifest(out, cfg, [out / "metrics.json"])
    return metrics


def _system_library(cfg):
    from .experiments import benchmark

    return benchmark(cfg.system, cfg.seed, cfg.c or None, cfg.tau1 or None, cfg.tau2 or None)[0].library


def _discover_csv(cfg, out, methods):
    times, _, names, curves = _smooth_csv(cfg)
    lib = cfg.basis(curves.p)
    rule = None
    if cfg.fit_end:
        n_fit = int(np.sum(times < cfg.fit_end))
        rule = trapezoid_rule(cfg.fit_end, max(4 * n_fit, 1024), start=float(times[0]))
    metrics = {"system": "csv", "data": Path(cfg.data).name, "channels": names, "methods": methods}
    for m in methods:
        sols = fit_equations(curves, lib, cfg.K, matching_order(m, cfg.K), rule=rule, n_jobs=cfg.workers,
                             **cfg.fit_options)
        _write_models(out / "models" / m, lib, sols)
        metrics[m] = {"lambda": [s.lam for s in sols], "n_terms": [int(s.support.size) for s in sols]}
    _write_json(out / "metrics.json", metrics)
    _manifest(out, cfg, [out / "metrics.json"])
    return metrics


def _model_dirs(root):
    root = Path(root)
    if (root / "library.json").exists():
        return {root.name: root}
    return {p.name: p for p in sorted(root.iterdir()) if (p / "library.json").exists()}


def cmd_predict(cfg):
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    times, _, names, curves = _smooth_csv(cfg)
    t_val = np.linspace(cfg.train_end, cfg.horizon_end, cfg.n_val)
    ref = curves.evaluate(0, t_val)
    result = {"dt": cfg.dt, "train_end": cfg.train_end, "horizon_end": cfg.horizon_end, "models": {}}
    dirs = _model_dirs(cfg.models)
    if not dirs:
        raise ConfigurationError(f"{cfg.models}: no model directories found")
    for name, directory in dirs.items():
        lib, sols = load_models(directory)
        K = sols[0].K
        pred = one_step_predictions(solutions_to_system(sols, lib, K), curves, t_val, cfg.dt)
        diverged = int(np.sum(~np.all(np.isfinite(pred), axis=0)))
        result["models"][name] = {"rpe": rpe(pred, ref), "diverged": diverged}
        write_csv(out / f"predictions_{name}.csv", t_val, pred, columns=names)
    _write_json(out / "rpe.json", result)
    return result


def _subject_adjacencies(root):
    dirs = _model_dirs(root)
    adjs = []
    for directory in dirs.values():
        lib, sols = load_models(directory)
        adjs.append(adjacency_from_solutions(sols, lib, sols[0].K))
    return list(dirs), adjs


def cmd_infer(cfg):
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    subjects, adjs = _subject_adjacencies(cfg.models)
    if len(adjs) < 2:
        raise ConfigurationError("inference needs at least two subjects")
    task = EdgeSample.from_adjacencies(adjs)
    binom = edge_binomial_screen(task, cfg.alpha)
    result = {
        "subjects": subjects,
        "trials": task.trials,
        "frequency": task.frequency,
        "binomial": binom.to_dict(),
        "centralities": _centrality_table(binom.rejected),
    }
    write_edge_list(out / "edges_binomial.csv", binom, task)
    if cfg.baseline:
        _, base_adjs = _subject_adjacencies(cfg.baseline)
        if len(base_adjs) < 2:
            raise ConfigurationError("baseline needs at least two subjects")
        base = EdgeSample.from_adjacencies(base_adjs)
        fisher = edge_fisher_screen(task, base, cfg.alpha)
        refined = refined_network(binom, fisher)
        result["fisher"] = fisher.to_dict()
        result["refined"] = refined.astype(int)
        result["refined_centralities"] = _centrality_table(refined)
        write_edge_list(out / "edges_refined.csv", binom, task, mask=refined)
    _write_json(out / "network.json", result)
    rows = result.get("refined_centralities", result["centralities"])
    with open(out / "centralities.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return result


def _centrality_table(adj):
    table = centralities(np.asarray(adj, dtype=int))
    return [{"node": f"x{v + 1}", **table[v]} for v in sorted(table)]


def cmd_report(cfg, paths=()):
    paths = [Path(p) for p in paths] or sorted(Path(cfg.output).rglob("metrics.json"))
    rows = []
    for path in paths:
        data = json.loads(Path(path).read_text())
        if "summary" not in data:
            continue
        for m in data["methods"]:
            row = {"system": data["system"], "n": data["n"], "gamma": data["gamma"], "method": m}
            for key, stats in data["summary"].items():
                row[f"{key}_mean"] = stats[m]["mean"]
                row[f"{key}_se"] = stats[m]["se"]
            row["replicates"] = len(data["replicates"])
            rows.append(row)
    if not rows:
        raise ConfigurationError("no replicate metrics found to report")
    rows.sort(key=lambda r: (r["system"], r["n"], r["gamma"], r["method"]))
    cols = ["system", "n", "gamma", "method", "rer_mean", "rer_se", "ma_mean", "ma_se", "replicates"]
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in cols])
    width = max(len(c) for c in cols) + 2
    print("".join(c.ljust(width) for c in cols))
    for r in rows:
        print("".join(_fmt(r.get(c, ""), 4).ljust(width) for c in cols))
    return rows


def _fmt(v, digits=None):
    if isinstance(v, float):
        return f"{v:.{digits}g}" if digits else repr(v)
    return str(v)


COMMANDS = {
    "simulate": cmd_simulate,
    "smooth": cmd_smooth,
    "discover": cmd_discover,
    "predict": cmd_predict,
    "infer": cmd_infer,
    "report": cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="semlearn", description="Sparse equation matching experiments")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in COMMANDS:
        sp = sub.add_parser(verb)
        sp.add_argument("--config", help="TOML configuration file")
        sp.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
        for f in dataclasses.fields(ExperimentConfig):
            flag = "--" + f.name.replace("_", "-")
            default = getattr(ExperimentConfig(), f.name)
            if isinstance(default, list):
                sp.add_argument(flag, dest=f.name, nargs="+", default=None)
            else:
                sp.add_argument(flag, dest=f.name, default=None)
        if verb == "report":
            sp.add_argument("paths", nargs="*", help="metrics.json files (default: search --output)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in fields}
    if overrides.get("tau1"):
        overrides["tau1"] = [int(v) for v in overrides["tau1"]]
    if overrides.get("tau2"):
        overrides["tau2"] = [int(v) for v in overrides["tau2"]]
    try:
        cfg = load_config(args.config, overrides)
        if args.print_config:
            sys.stdout.write(config_toml(cfg))
            return EXIT_OK
        cfg.validate(args.verb)
        if args.verb == "report":
            cmd_report(cfg, args.paths)
        else:
            COMMANDS[args.verb](cfg)
    except ReplicateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if exc.numeric else EXIT_CONFIG
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SEMError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
