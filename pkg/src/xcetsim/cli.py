"""Command-line interface: run scenarios, sweep parameters, validate, inspect.

Exit codes are stable: 0 success, 2 configuration error, 3 numerical abort.
Progress goes to stderr only; outputs are a trajectory CSV per run plus an
append-only JSON-lines manifest in the output directory.
"""

from __future__ import annotations

import argparse
import copy
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bath import BathError, correlation_reference, expand, reconstruction_error
from .hierarchy import HierarchyError
from .propagator import (
    PropagationError,
    equilibration_time,
    propagate,
    steady_diagnostics,
    write_trajectory_csv,
)
from .scenarios import (
    ConfigError,
    assemble_operator,
    builtin_scenario,
    config_from_dict,
    config_to_dict,
    dump_config,
    initial_state,
    load_config,
    site_labels,
    time_unit_ps,
)
from .validate import SUITES, run_suites

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _version_string() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"xcetsim {__version__}" + (f" ({rev})" if rev else "")


def _progress(label):
    state = {"last": 0.0}

    def cb(step, total):
        now = time.time()
        if now - state["last"] > 5.0 or step == total:
            print(f"{label}: step {step}/{total}", file=sys.stderr, flush=True)
            state["last"] = now

    return cb


def _load_scenario(args) -> "ScenarioConfig":
    if args.config:
        cfg = load_config(args.config)
    elif args.builtin:
        cfg = builtin_scenario(args.builtin, args.regime)
    else:
        raise ConfigError("either --config or --builtin is required")
    data = config_to_dict(cfg)
    if getattr(args, "depth", None) is not None:
        data["truncation"] = {"mode": "total_depth", "depth": args.depth}
    if getattr(args, "dt", None) is not None:
        data["run"]["dt"] = args.dt
    if getattr(args, "tmax", None) is not None:
        data["run"]["t_max"] = args.tmax
    if getattr(args, "record_every", None) is not None:
        data["run"]["record_every"] = args.record_every
    return config_from_dict(data)


def _write_manifest(outdir: Path, record: dict):
    path = outdir / "manifest.jsonl"
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def _execute_run(cfg, outdir: Path, name: str, engine: str, threads: int,
                 quiet: bool = False, convergence: dict | None = None):
    outdir.mkdir(parents=True, exist_ok=True)
    labels = site_labels(cfg.system)
    started = time.time()
    op = assemble_operator(cfg, engine=engine, threads=threads)
    state = initial_state(cfg, op.n_ados)
    traj = propagate(
        op, state,
        dt=cfg.run.dt, t_max=cfg.run.t_max, record_every=cfg.run.record_every,
        progress=None if quiet else _progress(name),
    )
    csv_path = outdir / f"{name}.csv"
    write_trajectory_csv(traj, csv_path, labels)
    record = {
        "name": name,
        "csv": csv_path.name,
        "config": config_to_dict(cfg),
        "truncation": cfg.truncation.describe(),
        "n_ados": op.n_ados,
        "n_fields": op.hierarchy.n_fields,
        "engine": op.engine,
        "threads": threads,
        "version": _version_string(),
        "wall_s": round(time.time() - started, 3),
        "time_unit_ps": time_unit_ps(cfg.unit_anchor),
    }
    if convergence:
        record["convergence"] = convergence
    _write_manifest(outdir, record)
    return traj, csv_path


def cmd_run(args) -> int:
    cfg = _load_scenario(args)
    name = args.name or (cfg.label or "run")
    traj, csv_path = _execute_run(
        cfg, Path(args.out), name, args.engine, args.threads, quiet=args.quiet
    )
    print(csv_path)
    return EXIT_OK


def cmd_validate(args) -> int:
    names = args.suites or list(SUITES)
    for n in names:
        if n not in SUITES:
            print(f"unknown suite {n!r}; available: {', '.join(SUITES)}", file=sys.stderr)
            return EXIT_CONFIG
    reports = run_suites(names, engine=args.engine)
    payload = []
    ok = True
    for r in reports:
        ok &= r["passed"]
        payload.append(r)
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{status} {r['name']:<12} error={r['error']:.3e} tol={r['tol']:.0e} "
              f"[{r['runtime_s']:.1f}s] {r['detail']}")
    if args.json:
        Path(args.json).write_text(json.dumps(payload, indent=2))
    return EXIT_OK if ok else 1


def _set_path(data: dict, path: str, value: float):
    """Assign into a nested config dict via dotted/bracketed path."""
    cur = data
    tokens = []
    for part in path.split("."):
        while "[" in part:
            head, rest = part.split("[", 1)
            idx, part = rest.split("]", 1)
            if head:
                tokens.append(head)
            tokens.append(int(idx))
        if part:
            tokens.append(part)
    for tok in tokens[:-1]:
        try:
            cur = cur[tok]
        except (KeyError, IndexError, TypeError):
            raise ConfigError(f"sweep path {path!r}: cannot descend at {tok!r}")
    last = tokens[-1]
    try:
        if not isinstance(cur[last], (int, float)):
            raise ConfigError(f"sweep path {path!r} does not address a scalar")
        cur[last] = value
    except (KeyError, IndexError, TypeError):
        raise ConfigError(f"sweep path {path!r}: no field {last!r}")


def cmd_sweep(args) -> int:
    base = _load_scenario(args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    values = [float(v) for v in args.values]
    rows = []
    bridge_site = base.system.n_xt  # watched sites: bridge and terminal
    last_site = base.system.n_total
    for value in values:
        data = config_to_dict(base)
        _set_path(data, args.param, value)
        cfg = config_from_dict(data)
        name = f"{args.name or 'sweep'}_{value:g}"
        traj, _ = _execute_run(cfg, outdir, name, args.engine, args.threads,
                               quiet=args.quiet)
        t_end = traj.times[-1]
        window = (0.8 * t_end, t_end)
        diag = steady_diagnostics(traj, window)
        teq = equilibration_time(traj, bridge_site)
        rows.append({
            "value": value,
            "final_terminal_pop": float(traj.populations[-1, last_site - 1]),
            "bridge_window_mean": float(diag["mean"][bridge_site - 1]),
            "equilibration_time": teq,
            "equilibration_time_ps": teq * time_unit_ps(cfg.unit_anchor),
        })
    summary = outdir / f"{args.name or 'sweep'}_summary.json"
    summary.write_text(json.dumps(rows, indent=2))
    hdr = f"{'value':>12} {'P_terminal(end)':>16} {'bridge mean':>12} {'t_eq':>10} {'t_eq[ps]':>10}"
    print(hdr)
    for r in rows:
        print(f"{r['value']:>12g} {r['final_terminal_pop']:>16.6f} "
              f"{r['bridge_window_mean']:>12.6f} {r['equilibration_time']:>10.2f} "
              f"{r['equilibration_time_ps']:>10.3f}")
    print(summary)
    return EXIT_OK


def cmd_decompose(args) -> int:
    cfg = _load_scenario(args)
    print(f"{'bath':>4} {'term':>4} {'c_prime':>24} {'c_dprime':>24} "
          f"{'Re rate':>12} {'Im rate':>12} {'delta':>12} {'recon_err':>10}")
    for i, att in enumerate(cfg.baths):
        series = expand(att.spec)
        if att.spec.lam == 0.0:
            err = 0.0
        else:
            err = reconstruction_error(
                att.spec, series, t_grid=np.arange(0.5, 50.01, 0.5)
            )
        for j, term in enumerate(series.terms):
            print(
                f"{i + 1:>4} {j:>4} {term.c_prime:>24.6e} {term.c_dprime:>24.6e} "
                f"{term.rate.real:>12.6f} {term.rate.imag:>12.6f} "
                f"{series.delta:>12.4e} {err:>10.2e}"
            )
    return EXIT_OK


def cmd_info(args) -> int:
    cfg = _load_scenario(args)
    op = assemble_operator(cfg, engine="numpy")
    mem = op.hierarchy.memory_estimate_bytes(cfg.system.n_total)
    print(f"scenario:        {cfg.label or '(file)'}")
    print(f"sites:           {cfg.system.n_total} ({cfg.system.n_xt} XT)")
    print(f"active baths:    {len(op.baths)} of {len(cfg.baths)}")
    print(f"n_fields:        {op.hierarchy.n_fields}")
    print(f"truncation:      {cfg.truncation.describe()}")
    print(f"ADO count:       {op.n_ados}")
    print(f"stack memory:    {mem / 1e6:.1f} MB per state "
          f"(~{7 * mem / 1e6:.1f} MB during propagation)")
    return EXIT_OK


def cmd_scenario(args) -> int:
    if args.action == "dump":
        cfg = builtin_scenario(args.builtin, args.regime)
        print(dump_config(cfg))
        return EXIT_OK
    print(f"unknown scenario action {args.action!r}", file=sys.stderr)
    return EXIT_CONFIG


def _add_scenario_args(p, with_overrides=True):
    p.add_argument("--builtin", choices=["up_and_down", "downhill"],
                   help="builtin scenario name")
    p.add_argument("--regime", choices=list("abcd"), default="b",
                   help="bridge-bath coupling regime (default b)")
    p.add_argument("--config", help="path to a scenario JSON file")
    if with_overrides:
        p.add_argument("--depth", type=int, help="override: total hierarchy depth")
        p.add_argument("--dt", type=float, help="override: integrator step")
        p.add_argument("--tmax", type=float, help="override: final time")
        p.add_argument("--record-every", type=int, dest="record_every",
                       help="override: steps between samples")
    p.add_argument("--engine", default="auto", choices=["auto", "numba", "numpy"])
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads (results are identical for any count)")
    p.add_argument("--quiet", action="store_true", help="suppress progress lines")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="xcetsim",
        description="Hierarchy-of-motion dynamics for exciton/electron transfer networks",
    )
    ap.add_argument("--version", action="version", version=_version_string())
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="propagate one scenario and write a trajectory CSV")
    _add_scenario_args(p)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--name", help="basename for the CSV (default: scenario label)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("validate", help="run oracle validation suites")
    p.add_argument("suites", nargs="*", help=f"subset of: {', '.join(SUITES)}")
    p.add_argument("--engine", default="auto", choices=["auto", "numba", "numpy"])
    p.add_argument("--json", help="also write the report to this JSON file")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("sweep", help="run one scenario over a list of parameter values")
    _add_scenario_args(p)
    p.add_argument("--param", required=True,
                   help="config path of a scalar, e.g. baths[6].lambda")
    p.add_argument("--values", required=True, nargs="+", help="values to sweep")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--name", help="basename prefix for outputs")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("decompose", help="print the bath correlation expansions")
    _add_scenario_args(p, with_overrides=False)
    p.set_defaults(fn=cmd_decompose)

    p = sub.add_parser("info", help="hierarchy size and memory estimate")
    _add_scenario_args(p, with_overrides=True)
    p.set_defaults(fn=cmd_info)

    p = sub.add_parser("scenario", help="inspect builtin scenarios")
    p.add_argument("action", choices=["dump"])
    p.add_argument("--builtin", default="up_and_down",
                   choices=["up_and_down", "downhill"])
    p.add_argument("--regime", choices=list("abcd"), default="b")
    p.set_defaults(fn=cmd_scenario)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, BathError, HierarchyError, FileNotFoundError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PropagationError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
