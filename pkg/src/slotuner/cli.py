"""Command-line entry point: ``slotuner tune | sweep | ablate | stress | report``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from . import harness
from .backend import BackendError, LiveBackend, SimBackend
from .config import AppConfig, ConfigError, load_config
from .controller import TuningTrajectory, run_tuning
from .knobs import live_k0, live_space, sim_k0, sim_space

logger = logging.getLogger("slotuner")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---- helpers ----------------------------------------------------------------


def _fmt(x: float | None, nd: int = 3) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "-"
    return f"{x:.{nd}f}"


def _out_dir(cfg: AppConfig, args: argparse.Namespace) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(out: Path, cfg: AppConfig, args: argparse.Namespace, outputs: list[Path]) -> Path:
    doc = {
        "schema_version": harness.SCHEMA_VERSION,
        "command": args.command,
        "argv": sys.argv[1:],
        "backend": getattr(args, "backend", None),
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "root_seed": cfg.seed,
        "versions": {
            "slotuner": _version(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "platform": platform.platform(),
        },
        "outputs": [p.name for p in outputs],
    }
    return harness.write_json(doc, out / "run_manifest.json")


def _parse_values(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise UsageError(f"bad value list {text!r}: {e}") from e


def _parse_assignments(items: list[str] | None) -> dict[str, str]:
    out = {}
    for item in items or []:
        for part in item.split(","):
            if not part.strip():
                continue
            if "=" not in part:
                raise UsageError(f"expected name=value, got {part!r}")
            name, value = part.split("=", 1)
            out[name.strip()] = value.strip()
    return out


def _knob_value(v: str) -> int | bool:
    low = v.lower()
    if low in ("on", "true", "yes"):
        return True
    if low in ("off", "false", "no"):
        return False
    try:
        return int(v)
    except ValueError as e:
        raise UsageError(f"bad knob value {v!r}") from e


def _print_rows(rows: list[harness.SweepRow], slo: float, limit: int | None = None) -> None:
    print(f"{'knobs':<42} {'p50':>7} {'p95':>7} {'p99':>7} {'goodput':>8} {'score':>8}  verdict")
    for r in rows[:limit]:
        m = r.metrics
        verdict = "ok" if m.p99 is not None and m.p99 <= slo else "VIOLATES"
        print(
            f"{r.knobs.label():<42} {_fmt(m.p50):>7} {_fmt(m.p95):>7} {_fmt(m.p99):>7} "
            f"{_fmt(m.goodput, 2):>8} {_fmt(r.score, 2):>8}  {verdict}"
        )


# ---- commands ---------------------------------------------------------------


def tune(cfg: AppConfig, backend_name: str, regime: str | None = None, profile: str = "baseline") -> TuningTrajectory:
    """Library form of ``slotuner tune``."""
    if backend_name == "sim":
        sim_cfg = cfg.sim_config()
        if regime:
            sim_cfg = replace(sim_cfg, regime=regime)
        if profile == "stress":
            sim_cfg = harness.stress_profile(sim_cfg)
        backend = SimBackend(sim_cfg, cfg.slo)
        space, k0 = sim_space(), sim_k0()
    else:
        backend = LiveBackend(cfg.live, cfg.slo)
        space, k0 = live_space(), live_k0()
    return run_tuning(
        backend,
        space,
        k0,
        cfg.budget_for(backend_name),
        cfg.slo,
        cfg.controller.delta,
        cfg.scoring,
        strict_alg1=cfg.controller.strict_alg1,
        fail_fast=True,
    )


def cmd_tune(cfg: AppConfig, args: argparse.Namespace) -> int:
    out = _out_dir(cfg, args)
    try:
        traj = tune(cfg, args.backend, args.regime)
    except BackendError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    paths = harness.write_trajectory(traj, out / "trajectory.jsonl", out / "summary.json")
    write_manifest(out, cfg, args, list(paths))
    fm = traj.final_metrics
    print(f"best knobs : {traj.best.label() if traj.best else '-'}")
    if fm is not None:
        label = "p99 (EMA)" if traj.objective == "sim" else "p99"
        print(f"{label:<11}: {_fmt(fm.p99_smoothed if traj.objective == 'sim' else fm.p99)} s (SLO {cfg.slo})")
        print(f"goodput    : {_fmt(fm.goodput, 2)} rps")
    print(f"score      : {_fmt(traj.final_score, 3)}  ({traj.segments} segments, {traj.moves} moves)")
    print(f"wrote {paths[0]}")
    return EXIT_OK


def _write_sweep(out: Path, stem: str, result: harness.SweepResult) -> list[Path]:
    return [
        harness.write_sweep_csv(result, out / f"{stem}.csv"),
        harness.write_json(harness.sweep_to_json(result), out / f"{stem}.json"),
    ]


def _sweep_kwargs(cfg: AppConfig, args: argparse.Namespace) -> dict:
    return {
        "sim_cfg": cfg.sim_config(),
        "live_cfg": cfg.live,
        "slo": cfg.slo,
        "weights": cfg.scoring,
        "root_seed": cfg.seed,
        "workers": getattr(args, "workers", 1),
    }


def cmd_sweep(cfg: AppConfig, args: argparse.Namespace) -> int:
    if args.grid == "baseline":
        if args.backend != "sim":
            raise UsageError("--grid baseline is a simulator grid; use --set for live sweeps")
        grid = dict(harness.BASELINE_GRID)
    else:
        grid = {}
    for name, values in _parse_assignments(args.set).items():
        grid[name] = [_knob_value(v) for v in values.split(":")] if ":" in values else [_knob_value(values)]
    regimes = ["steady", "bursty"] if args.regime == "both" else [args.regime]
    base = {k: _knob_value(v) for k, v in _parse_assignments(args.base).items()}
    out = _out_dir(cfg, args)
    outputs: list[Path] = []
    for regime in regimes:
        try:
            spec = harness.SweepSpec(
                grid=grid, backend=args.backend, regime=regime, seeds=args.seeds, profile=args.profile, base=base
            )
            harness.grid_cells(spec)
        except (ValueError, KeyError) as e:
            raise UsageError(str(e)) from e
        result = harness.run_sweep(spec, **_sweep_kwargs(cfg, args))
        outputs += _write_sweep(out, f"sweep_{regime}" if len(regimes) > 1 else "sweep", result)
        print(f"[{regime}] {len(result.rows)} rows; Pareto front:")
        _print_rows(harness.pareto_front(result.points()), cfg.slo)
    write_manifest(out, cfg, args, outputs)
    return EXIT_OK


def cmd_ablate(cfg: AppConfig, args: argparse.Namespace) -> int:
    space = sim_space() if args.backend == "sim" else live_space()
    k0 = sim_k0() if args.backend == "sim" else live_k0()
    try:
        base = space.vector({**k0.to_dict(), **{k: _knob_value(v) for k, v in _parse_assignments(args.base).items()}})
        values = _parse_values(args.values)
        if not values:
            raise ValueError("--values is empty")
        if args.dim not in space.names and args.dim not in space.toggles:
            raise ValueError(f"unknown knob {args.dim!r}")
        for d in space.dims:
            if not d.contains(int(base[d.name])):
                raise ValueError(f"base {d.name}={base[d.name]} outside [{d.min}, {d.max}]")
        if args.dim in space.names:
            d = space.dim(args.dim)
            bad = [v for v in values if not d.contains(v)]
            if bad:
                raise ValueError(f"{args.dim} values {bad} outside [{d.min}, {d.max}]")
    except (ValueError, KeyError) as e:
        raise UsageError(str(e)) from e
    result = harness.run_ablation(
        base, args.dim, values, backend=args.backend, regime=args.regime, seeds=args.seeds, **_sweep_kwargs(cfg, args)
    )
    out = _out_dir(cfg, args)
    outputs = _write_sweep(out, f"ablate_{args.dim}", result)
    write_manifest(out, cfg, args, outputs)
    print(f"ablation of {args.dim} around {base.label()}: {len(result.rows)} rows")
    _print_rows(result.points(), cfg.slo)
    return EXIT_OK


def cmd_stress(cfg: AppConfig, args: argparse.Namespace) -> int:
    if args.backend != "sim":
        raise UsageError("stress runs on the simulator backend only")
    spec = harness.SweepSpec(grid=dict(harness.BASELINE_GRID), regime="bursty", seeds=args.seeds, profile="stress")
    kwargs = _sweep_kwargs(cfg, args)
    fixed = harness.run_sweep(spec, **kwargs)

    traj = tune(cfg, "sim", profile="stress")
    stressed = harness.stress_profile(cfg.sim_config())
    tuned = harness.SweepResult(knob_names=fixed.knob_names)
    rows = []
    for i in range(args.seeds):
        seed = harness.derive_seed(cfg.seed, i)
        m, sc = harness.measure_sim_cell(stressed.with_seed(seed), traj.best, cfg.slo, cfg.scoring)
        rows.append(harness.SweepRow(traj.best, stressed.regime, seed, m, sc))
    tuned.rows.extend(rows)
    if args.seeds > 1:
        tuned.rows.append(harness.mean_row(rows))

    out = _out_dir(cfg, args)
    outputs = _write_sweep(out, "stress_fixed", fixed) + _write_sweep(out, "stress_tuned", tuned)
    outputs += list(harness.write_trajectory(traj, out / "stress_trajectory.jsonl", out / "stress_summary.json"))
    write_manifest(out, cfg, args, outputs)
    print("fixed baselines under stress, Pareto front:")
    _print_rows(harness.pareto_front(fixed.points()), cfg.slo)
    print("tuned profile under stress:")
    _print_rows(tuned.points(), cfg.slo)
    return EXIT_OK


def _report_trajectory(path: Path, slo: float) -> list[dict]:
    summary = path.with_name("summary.json") if path.name == "trajectory.jsonl" else None
    traj = harness.read_trajectory(path, summary)
    slo = traj.slo or slo
    print(f"== trajectory {path} ({len(traj.steps)} steps, objective {traj.objective})")
    print(f"{'step':>4} {'current':<42} {'p99':>7} {'score':>8}  move")
    plot = []
    for s in traj.steps:
        m = s.current.metrics
        p99 = m.p99_smoothed if traj.objective == "sim" else m.p99
        marker = f"-> {s.moved_to.label()}" if s.moved_to else "stay"
        print(f"{s.index:>4} {s.current.knobs.label():<42} {_fmt(p99):>7} {_fmt(s.current.score, 2):>8}  {marker}")
        plot.append(
            {"source": path.name, "kind": "step", "index": s.index, **s.current.knobs.to_dict(),
             "p50": m.p50, "p95": m.p95, "p99": m.p99, "goodput": m.goodput, "score": s.current.score,
             "pareto": ""}
        )
    if traj.best is not None:
        fm = traj.final_metrics
        verdict = "meets SLO" if fm and fm.p99 is not None and fm.p99 <= slo else "violates SLO"
        print(f"best: {traj.best.label()}  p50/p95/p99 = {_fmt(fm.p50 if fm else None)}/"
              f"{_fmt(fm.p95 if fm else None)}/{_fmt(fm.p99 if fm else None)}  "
              f"goodput {_fmt(fm.goodput if fm else None, 2)}  ({verdict})")
    return plot


def _report_sweep(path: Path, slo: float) -> list[dict]:
    result = harness.read_sweep_csv(path)
    front = harness.pareto_front(result.points())
    print(f"== sweep {path} ({len(result.rows)} rows), Pareto front by p99:")
    _print_rows(front, slo)
    feasible = [r for r in result.points() if r.metrics.p99 is not None and r.metrics.p99 <= slo]
    if feasible:
        best = max(feasible, key=lambda r: r.metrics.goodput)
        print(f"best feasible: {best.knobs.label()} goodput {_fmt(best.metrics.goodput, 2)} p99 {_fmt(best.metrics.p99)}")
    return [
        {"source": path.name, "kind": "sweep", "index": i, **r.knobs.to_dict(),
         "p50": r.metrics.p50, "p95": r.metrics.p95, "p99": r.metrics.p99, "goodput": r.metrics.goodput,
         "score": r.score, "pareto": int(r.pareto)}
        for i, r in enumerate(result.rows)
    ]


def cmd_report(cfg: AppConfig, args: argparse.Namespace) -> int:
    files: list[Path] = []
    for p in map(Path, args.inputs):
        if p.is_dir():
            files += sorted(p.glob("*.jsonl")) + sorted(p.glob("*.csv"))
        elif p.exists():
            files.append(p)
        else:
            print(f"error: {p}: no such file", file=sys.stderr)
            return EXIT_FAIL
    files = [f for f in files if f.name != "report_plot_data.csv"]
    if not files:
        print("error: no inputs to report on", file=sys.stderr)
        return EXIT_FAIL
    plot: list[dict] = []
    try:
        for f in files:
            if f.suffix == ".jsonl":
                plot += _report_trajectory(f, cfg.slo)
            else:
                plot += _report_sweep(f, cfg.slo)
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    out = Path(args.out) if args.out else files[0].parent
    out.mkdir(parents=True, exist_ok=True)
    columns: list[str] = []
    for row in plot:
        columns += [c for c in row if c not in columns]
    target = out / "report_plot_data.csv"
    with target.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        w.writerows(plot)
    print(f"wrote {target}")
    return EXIT_OK


# ---- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (defaults if omitted)")
    common.add_argument("--out", help="output directory (default: output_dir from config)")
    common.add_argument("--seed", type=int, help="root seed; overrides the config")
    common.add_argument("-v", "--verbose", action="count", default=0)

    backend = argparse.ArgumentParser(add_help=False)
    backend.add_argument("--backend", choices=("sim", "live"), default="sim")

    p = argparse.ArgumentParser(prog="slotuner", description="SLO-aware knob tuning for LLM serving.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tune", parents=[common, backend], help="hill-climb from the default start point")
    t.add_argument("--regime", choices=("steady", "bursty"), help="simulator arrival regime")

    s = sub.add_parser("sweep", parents=[common, backend], help="grid sweep")
    s.add_argument("--grid", choices=("baseline", "none"), default="baseline")
    s.add_argument("--set", action="append", metavar="NAME=V1:V2", help="sweep a knob over values (adds to grid)")
    s.add_argument("--base", action="append", metavar="NAME=V", help="fixed value for knobs not swept")
    s.add_argument("--regime", choices=("steady", "bursty", "both"), default="steady")
    s.add_argument("--profile", choices=("baseline", "stress"), default="baseline")
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--workers", type=int, default=1)

    a = sub.add_parser("ablate", parents=[common, backend], help="vary one knob around a base point")
    a.add_argument("--dim", required=True)
    a.add_argument("--values", required=True, help="comma-separated values")
    a.add_argument("--base", action="append", metavar="NAME=V")
    a.add_argument("--regime", choices=("steady", "bursty"), default="steady")
    a.add_argument("--seeds", type=int, default=1)
    a.add_argument("--workers", type=int, default=1)

    st = sub.add_parser("stress", parents=[common, backend], help="fixed baselines vs tuned profile under stress")
    st.add_argument("--seeds", type=int, default=1)
    st.add_argument("--workers", type=int, default=1)

    r = sub.add_parser("report", parents=[common], help="summarize exported trajectories and sweeps")
    r.add_argument("inputs", nargs="+", help="files or directories")
    return p


COMMANDS = {"tune": cmd_tune, "sweep": cmd_sweep, "ablate": cmd_ablate, "stress": cmd_stress, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, root_seed=args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if getattr(args, "seeds", 1) < 1:
            raise UsageError("--seeds must be >= 1")
        return COMMANDS[args.command](cfg, args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (BackendError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
