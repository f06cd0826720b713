"""Command-line entry points: ``simulate``, ``replay``, ``tune`` and ``report``.

Every command reads a flat JSON config (see :data:`cfba.data_io.CONFIG_DEFAULTS`),
writes CSV results into ``--out`` and leaves two files beside them:
``config.json`` (the fully resolved configuration) and ``manifest.json``
(command, seeds, version).  Running the same command on that
``config.json`` reproduces the CSVs byte for byte.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import subprocess
import sys
from dataclasses import fields as dc_fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .baselines import POLICY_KINDS, PolicySpec, build_policy
from .data_io import (ConfigError, DataError, Dataset, load_config, load_log_csv,
                      load_movielens, read_report_rows, resolve_config, save_config, save_report)
from .evaluation import replay_evaluate, report_from_trajectory, search_concentration
from .simulation import generate, run_simulation, split_users
from .tuning import GridSpec, TuningData, default_grids, empirical_priors, grid_search
from .types import HyperParams, validate_hyperparams

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
_HYPER = {f.name for f in dc_fields(HyperParams)}
_SPEC = {"fit_mode", "sweeps", "center", "update", "selector", "fix_loadings",
         "pca_components", "refit_every"}
_SPEC_ALIASES = {"popularity_prior": "prior_strength"}


# ---------------------------------------------------------------------------
# configuration helpers


def _methods(cfg: dict) -> list[str]:
    methods = list(cfg["methods"])
    if not methods:
        raise ConfigError("methods list is empty")
    bad = [m for m in methods if m not in POLICY_KINDS]
    if bad:
        raise ConfigError(f"unknown method(s) {', '.join(bad)}; valid kinds: {', '.join(POLICY_KINDS)}")
    return methods


def _seeds(cfg: dict) -> list[int]:
    seeds = cfg["seeds"] if cfg["seeds"] is not None else [cfg["seed"]]
    if not seeds:
        raise ConfigError("seeds list is empty")
    return [int(s) for s in seeds]


def _horizons(cfg: dict) -> list[int]:
    t = cfg["T"]
    ts = [int(x) for x in (t if isinstance(t, list) else [t])]
    if not ts or min(ts) < 1:
        raise ConfigError("T must be a positive integer or a list of them")
    return ts


def policy_spec(cfg: dict, method: str, priors: Optional[dict] = None) -> PolicySpec:
    """Spec for ``method``: global settings, then empirical priors, then per-method overrides."""
    hyper = {k: cfg[k] for k in _HYPER}
    if priors and cfg["empirical_priors"]:
        hyper.update({k: v for k, v in priors.items() if k in _HYPER})
    spec = {k: cfg[k] for k in _SPEC if k in cfg}
    spec["prior_strength"] = cfg["popularity_prior"]
    override = cfg["overrides"].get(method, {})
    unknown = sorted(set(override) - _HYPER - _SPEC - set(_SPEC_ALIASES))
    if unknown:
        raise ConfigError(f"unknown override keys for {method}: {', '.join(unknown)}")
    for key, value in override.items():
        if key in _HYPER:
            hyper[key] = value
        else:
            spec[_SPEC_ALIASES.get(key, key)] = value
    try:
        h = HyperParams(**hyper)
        validate_hyperparams(h.replace(k=int(h.k)))
        h = h.replace(k=int(h.k))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{method}: {exc}") from None
    return PolicySpec(method, h, **spec)


def _stamp() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5)
        return rev.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _finish(out: Path, command: str, cfg: dict, config_path: Optional[str], outputs: list[str]):
    save_config(cfg, out / "config.json")
    manifest = {"command": command, "config": str(config_path) if config_path else None,
                "resolved_config": "config.json", "seeds": _seeds(cfg), "out": str(out),
                "outputs": sorted(outputs), "version": __version__, "git": _stamp()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


def _dataset(cfg: dict) -> Dataset:
    if cfg["data_dir"]:
        return load_movielens(cfg["data_dir"], standardize_age=bool(cfg["standardize_age"]))
    if cfg["log_path"]:
        if not isinstance(cfg["log_schema"], dict):
            raise ConfigError("log_path needs a log_schema object")
        return load_log_csv(cfg["log_path"], cfg["log_schema"])
    raise ConfigError("replay needs data_dir or log_path")


def _world_sizes(cfg: dict) -> dict:
    return {"i": cfg["n_users"], "j": cfg["n_items"], "p": cfg["p"], "q": cfg["q"], "k": cfg["k_true"]}


def _split_dataset(ds: Dataset, t: int, test_users: int, seed: int):
    counts = ds.record_counts()
    eligible = np.nonzero(counts > t)[0]
    if eligible.size == 0:
        raise DataError(f"T={t} exceeds every user's record count (max {int(counts.max())})")
    n_test = min(test_users, eligible.size)
    test = np.sort(np.random.default_rng(seed).choice(eligible, n_test, replace=False))
    train = np.setdiff1d(np.arange(ds.feedback.n_users), test)
    return train, test


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: dict, out, config_path: Optional[str] = None) -> list[Path]:
    """Synthetic closed-loop runs for every (seed, method)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    methods, seeds, t = _methods(cfg), _seeds(cfg), max(_horizons(cfg))
    slate = cfg["slate_size"] or 1
    reports, table = [], []
    for seed in seeds:
        try:
            world = generate(cfg["setting"], seed, **_world_sizes(cfg))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        train, _ = split_users(world.n_users, cfg["new_users"], seed)
        priors = empirical_priors(world.feedback(train), world.d.matrix[train], world.a.matrix)
        cache: dict = {}
        for method in methods:
            spec = policy_spec(cfg, method, priors)
            traj = run_simulation(world, spec, cfg["new_users"], t, slate, seed, cache=cache)
            rep = report_from_trajectory(traj, t, method, seed, slate)
            reports.append(rep)
            marks = sorted({1, *range(5, t + 1, 5), t})
            table.extend((method, cfg["setting"], seed, p, float(rep.per_period[p - 1])) for p in marks)
    save_report(reports, out / "curves.csv")
    _write_rows(out / "table.csv", ("method", "setting", "seed", "period", "car"), table)
    _finish(out, "simulate", cfg, config_path, ["curves.csv", "table.csv"])
    return [out / "curves.csv", out / "table.csv"]


def cmd_replay(cfg: dict, out, config_path: Optional[str] = None) -> list[Path]:
    """Replay every method on held-out logged users, for each seed and horizon."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    methods, seeds, horizons = _methods(cfg), _seeds(cfg), _horizons(cfg)
    slate = cfg["slate_size"] or 10
    ds = _dataset(cfg)
    d = None if ds.demographics is None else ds.demographics.matrix
    a = None if ds.attributes is None else ds.attributes.matrix
    phases = [tuple(p) for p in cfg["phases"]] if cfg["phases"] else None
    reports, table, conc = [], [], []
    for seed in seeds:
        train, test = _split_dataset(ds, max(horizons), cfg["test_users"], seed)
        fb = ds.feedback.subset_users(train)
        d_train = None if d is None else d[train]
        priors = empirical_priors(fb, d_train, a)
        logs = ds.user_logs(test)
        cache: dict = {}
        for method in methods:
            policy = build_policy(policy_spec(cfg, method, priors), fb, d_train, a, seed, cache)
            for t in horizons:
                rep = replay_evaluate(logs, policy, t, slate, seed, method)
                reports.append(rep)
                table.append((method, seed, t, float(rep.car), int(rep.retained_counts.sum()),
                              int(np.count_nonzero(rep.retained_counts))))
                if phases and t >= max(b for _, b in phases):
                    counts = search_concentration(rep.trajectory.slates, phases)
                    for n, user in enumerate(rep.trajectory.users):
                        for m, (lo, hi) in enumerate(phases):
                            conc.append((method, seed, t, int(user), f"{lo}-{hi}", int(counts[n, m])))
    outputs = ["curves.csv", "table.csv"]
    save_report(reports, out / "curves.csv")
    _write_rows(out / "table.csv", ("method", "seed", "T", "car", "retained", "users_observed"), table)
    if phases:
        _write_rows(out / "concentration.csv", ("method", "seed", "T", "user", "phase", "unique_items"), conc)
        outputs.append("concentration.csv")
    _finish(out, "replay", cfg, config_path, outputs)
    return [out / o for o in outputs]


def cmd_tune(cfg: dict, out, config_path: Optional[str] = None) -> list[Path]:
    """Grid-search each listed method and write a config with the winners as overrides."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    methods, seed, t = _methods(cfg), _seeds(cfg)[0], max(_horizons(cfg))
    if cfg["data_dir"] or cfg["log_path"]:
        ds = _dataset(cfg)
        train, _ = _split_dataset(ds, t, cfg["test_users"], seed)
        d = None if ds.demographics is None else ds.demographics.matrix[train]
        a = None if ds.attributes is None else ds.attributes.matrix
        data = TuningData(ds.feedback.subset_users(train), d, a, logs=ds.user_logs(train))
        slate = cfg["slate_size"] or 10
    else:
        world = generate(cfg["setting"], seed, **_world_sizes(cfg))
        train, _ = split_users(world.n_users, cfg["new_users"], seed)
        data = TuningData(world.feedback(train), world.d.matrix[train], world.a.matrix,
                          utility=world.utility[train])
        slate = cfg["slate_size"] or 1
    p = data.demographics.shape[1] if data.demographics is not None else data.feedback.n_items
    q = data.attributes.shape[1] if data.attributes is not None else data.feedback.n_items
    default = default_grids(p, q, cfg["metric"])
    grid = GridSpec(tuple(cfg["grid_k"] or default.k_values),
                    tuple(cfg["grid_alpha"] or default.alpha_values),
                    tuple(cfg["grid_sigma2"] or default.sigma2_values), cfg["metric"])
    priors = empirical_priors(data.feedback, data.demographics, data.attributes)
    tuned = json.loads(json.dumps(cfg))
    rows = []
    # the PCA variants borrow the latent dimension chosen for cfba, so it goes first
    for method in sorted(methods, key=lambda m: m != "cfba"):
        res = grid_search(data, method, grid, cfg["split_fraction"], seed,
                          policy_spec(tuned, method, priors), t, slate)
        rows.extend((method, *r) for r in res.table)
        entry = dict(tuned["overrides"].get(method, {}))
        entry.update({"k": res.best.k, "alpha": res.best.alpha, "sigma2": res.best.sigma2})
        tuned["overrides"][method] = entry
        if method == "cfba":
            for pca in ("ts-pca", "ucb-pca"):
                tuned["overrides"].setdefault(pca, {})["pca_components"] = res.best.k
    _write_rows(out / "scores.csv", ("method", "k", "alpha", "sigma2", "score"), rows)
    save_config(tuned, out / "best.json")
    _finish(out, "tune", cfg, config_path, ["scores.csv", "best.json"])
    return [out / "scores.csv", out / "best.json"]


def cmd_report(inputs: Sequence[str], out) -> list[Path]:
    """Mean and (with several seeds) standard error of every metric across result files."""
    if not inputs:
        raise ConfigError("report needs at least one input CSV")
    rows = []
    for path in inputs:
        rows.extend(read_report_rows(path))
    groups: dict[tuple, list[float]] = {}
    seeds = set()
    for r in rows:
        groups.setdefault((r["method"], r["T"], r["period"], r["metric"]), []).append(r["value"])
        seeds.add(r["seed"])
    with_se = len(seeds) > 1
    header = ["method", "T", "period", "metric", "n", "mean"] + (["stderr"] if with_se else [])
    table = []
    for key in sorted(groups):
        vals = np.array(groups[key])
        vals = vals[np.isfinite(vals)]
        mean = float(vals.mean()) if vals.size else float("nan")
        row = [*key, int(vals.size), mean]
        if with_se:
            row.append(float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else float("nan"))
        table.append(row)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "summary.csv", header, table)
    return [out / "summary.csv"]


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfba", description="Cold-start recommendation experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("simulate", "closed-loop runs on synthetic worlds"),
                           ("replay", "offline replay on logged data"),
                           ("tune", "grid search for K, alpha and sigma2")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--seed", type=int, help="single seed, overriding the config")
        p.add_argument("--out", default=f"runs/{name}", help="output directory")
        p.add_argument("--methods", help="comma-separated method list, overriding the config")
        p.add_argument("--mode", choices=("literal", "consistent"), help="engine update mode")
    p = sub.add_parser("report", help="aggregate result CSVs across seeds")
    p.add_argument("inputs", nargs="*", help="curves.csv files written by simulate or replay")
    p.add_argument("--out", default="runs/report")
    return parser


def _apply_flags(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    if args.seed is not None:
        cfg["seed"], cfg["seeds"] = args.seed, None
    if args.methods:
        cfg["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.mode:
        cfg["update"] = args.mode
    return resolve_config(cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            paths = cmd_report(args.inputs, args.out)
        else:
            cfg = _apply_flags(load_config(args.config), args)
            command = {"simulate": cmd_simulate, "replay": cmd_replay, "tune": cmd_tune}[args.command]
            paths = command(cfg, args.out, args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # settings that are individually valid but clash with the data, e.g. K above its rank
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
