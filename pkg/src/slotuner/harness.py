"""Experiment suites: grid sweeps, one-knob ablations, stress profiles, Pareto fronts, export."""

from __future__ import annotations

import csv
import itertools
import json
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .backend import BackendError, LiveBackend, LiveBackendConfig, invalid_metrics
from .controller import Evaluation, TuningStep, TuningTrajectory
from .knobs import KnobSpace, KnobVector, live_k0, live_space, sim_k0, sim_space
from .metrics import SegmentMetrics, summarize
from .scoring import ScoreWeights, score_live, score_sim
from .simulator import SimConfig, simulate_segment

SCHEMA_VERSION = 1
STRESS_LENGTH_SCALE = 1.5
BASELINE_GRID: dict[str, list[int]] = {"W": [1, 2, 4], "k": [2, 4, 8, 12], "B": [4, 8, 16]}
METRIC_COLUMNS = ("regime", "seed", "p50", "p95", "p99", "goodput", "throughput", "completed", "failed", "score", "pareto")


@dataclass
class SweepSpec:
    grid: dict[str, list[int]]
    backend: str = "sim"
    regime: str = "steady"
    seeds: int = 1
    profile: str = "baseline"
    base: dict[str, int | bool] = field(default_factory=dict)
    max_cells: int = 4096

    def __post_init__(self) -> None:
        if not self.grid:
            raise ValueError("sweep grid is empty")
        for name, values in self.grid.items():
            if not values:
                raise ValueError(f"sweep value list for {name!r} is empty")
        if self.backend not in ("sim", "live"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.regime not in ("steady", "bursty"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.profile not in ("baseline", "stress"):
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.seeds < 1:
            raise ValueError("seeds per cell must be >= 1")
        if self.n_cells > self.max_cells:
            raise ValueError(f"sweep has {self.n_cells} cells, cap is {self.max_cells}")

    @property
    def n_cells(self) -> int:
        return math.prod(len(v) for v in self.grid.values())

    @property
    def space(self) -> KnobSpace:
        return sim_space() if self.backend == "sim" else live_space()


@dataclass
class SweepRow:
    knobs: KnobVector
    regime: str
    seed: int | str
    metrics: SegmentMetrics
    score: float
    pareto: bool = False

    @property
    def is_mean(self) -> bool:
        return self.seed == "mean"


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)
    knob_names: list[str] = field(default_factory=list)

    def points(self) -> list[SweepRow]:
        """Rows that represent one configuration each: mean rows if present, else all rows."""
        means = [r for r in self.rows if r.is_mean]
        if means:
            return means
        return [r for r in self.rows if isinstance(r.seed, int)]


def derive_seed(root_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(root_seed), int(index)]).generate_state(1)[0])


def stress_profile(cfg: SimConfig) -> SimConfig:
    """Longer prompts and outputs (means x1.5) under the configured bursty regime."""
    shift = math.log(STRESS_LENGTH_SCALE)
    return replace(cfg, prompt_mu=cfg.prompt_mu + shift, output_mu=cfg.output_mu + shift, regime="bursty")


def grid_cells(spec: SweepSpec) -> list[KnobVector]:
    space = spec.space
    defaults = sim_k0(space) if spec.backend == "sim" else live_k0(space)
    base: dict[str, int | bool] = defaults.to_dict()
    base.update(spec.base)
    unknown = set(spec.grid) - set(space.names) - set(space.toggles)
    if unknown:
        raise ValueError(f"unknown knobs in sweep grid: {sorted(unknown)}")
    names = [n for n in space.names + list(space.toggles) if n in spec.grid]
    cells = []
    for combo in itertools.product(*(spec.grid[n] for n in names)):
        values = dict(base)
        values.update(zip(names, combo))
        k = space.vector(values)
        for d in space.dims:
            if not d.contains(int(k[d.name])):
                raise ValueError(f"{d.name}={k[d.name]} outside [{d.min}, {d.max}]")
        cells.append(k)
    return cells


def measure_sim_cell(cfg: SimConfig, knobs: KnobVector, slo: float, weights: ScoreWeights) -> tuple[SegmentMetrics, float]:
    run = simulate_segment(cfg, knobs)
    m = summarize(run.traces, slo, run.elapsed, residual=run.residual)
    return m, score_sim(m, knobs, slo, weights)


def _sim_job(args: tuple) -> tuple[SegmentMetrics, float]:
    try:
        return measure_sim_cell(*args)
    except ValueError:
        # recorded as an unmeasurable cell; the sweep carries on
        return invalid_metrics(0.0), -math.inf


def mean_row(rows: Sequence[SweepRow]) -> SweepRow:
    valid = [r for r in rows if r.metrics.valid]
    first = rows[0]
    if not valid:
        return SweepRow(first.knobs, first.regime, "mean", invalid_metrics(first.metrics.window), -math.inf)

    def avg(attr: str) -> float:
        return float(np.mean([getattr(r.metrics, attr) for r in valid]))

    m = SegmentMetrics(
        p50=avg("p50"),
        p95=avg("p95"),
        p99=avg("p99"),
        goodput=avg("goodput"),
        throughput=avg("throughput"),
        completed=int(round(avg("completed"))),
        failed=int(round(float(np.mean([r.metrics.failed for r in rows])))),
        window=avg("window"),
    )
    return SweepRow(first.knobs, first.regime, "mean", m, float(np.mean([r.score for r in valid])))


def run_sweep(
    spec: SweepSpec,
    *,
    sim_cfg: SimConfig | None = None,
    live_cfg: LiveBackendConfig | None = None,
    slo: float = 1.2,
    weights: ScoreWeights | None = None,
    root_seed: int = 0,
    workers: int = 1,
) -> SweepResult:
    """Evaluate every cell x seed.

    Seed ``i`` of every cell uses the same derived simulator seed, so cells are
    compared on identical arrival and length streams.
    """
    weights = weights or ScoreWeights()
    cells = grid_cells(spec)
    space = spec.space
    result = SweepResult(knob_names=space.names + list(space.toggles))
    per_cell: list[list[SweepRow]] = []

    if spec.backend == "sim":
        cfg = replace(sim_cfg or SimConfig(), regime=spec.regime)
        if spec.profile == "stress":
            cfg = stress_profile(cfg)
        seeds = [derive_seed(root_seed, i) for i in range(spec.seeds)]
        jobs = [(cfg.with_seed(s), k, slo, weights) for k in cells for s in seeds]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_sim_job, jobs, chunksize=4))
        else:
            outcomes = [_sim_job(j) for j in jobs]
        it = iter(outcomes)
        for k in cells:
            rows = []
            for s in seeds:
                m, sc = next(it)
                rows.append(SweepRow(k, cfg.regime, s, m, sc))
            per_cell.append(rows)
    else:
        backend = LiveBackend(live_cfg or LiveBackendConfig(), slo)
        for k in cells:
            rows = []
            for i in range(spec.seeds):
                try:
                    seg = backend.measure(k)
                    m = seg.metrics
                except BackendError:
                    m = invalid_metrics(backend.cfg.window_s)
                sc = score_live(m, k, slo, weights)
                rows.append(SweepRow(k, "steady", i, m, sc))
            per_cell.append(rows)

    for rows in per_cell:
        result.rows.extend(rows)
        if spec.seeds > 1:
            result.rows.append(mean_row(rows))
    mark_pareto(result.points())
    return result


def run_ablation(
    base: KnobVector,
    dim: str,
    values: Sequence[int],
    *,
    backend: str = "sim",
    regime: str = "steady",
    seeds: int = 1,
    **kwargs,
) -> SweepResult:
    """Vary one knob around ``base``; every other knob stays fixed."""
    space = sim_space() if backend == "sim" else live_space()
    if dim in space.toggles:
        vals = [bool(v) for v in values]
    else:
        d = space.dim(dim)
        for v in values:
            if not d.contains(int(v)):
                raise ValueError(f"{dim}={v} outside [{d.min}, {d.max}]")
        vals = [int(v) for v in values]
    spec = SweepSpec(grid={dim: vals}, backend=backend, regime=regime, seeds=seeds, base=base.to_dict())
    return run_sweep(spec, **kwargs)


def dominates(a: SegmentMetrics, b: SegmentMetrics) -> bool:
    return a.goodput >= b.goodput and a.p99 <= b.p99 and (a.goodput > b.goodput or a.p99 < b.p99)


def pareto_front(rows: Sequence[SweepRow]) -> list[SweepRow]:
    """Rows not dominated in (higher goodput, lower p99), ordered by p99 ascending.

    Sort by p99 then goodput descending; a row is on the front iff its goodput
    beats every row before it (exact duplicates are all kept).
    """
    valid = [r for r in rows if r.metrics.valid]
    order = sorted(range(len(valid)), key=lambda i: (valid[i].metrics.p99, -valid[i].metrics.goodput))
    front_idx = []
    best_g = -math.inf
    last = None
    for i in order:
        m = valid[i].metrics
        if m.goodput > best_g:
            front_idx.append(i)
            best_g = m.goodput
            last = m
        elif last is not None and m.goodput == last.goodput and m.p99 == last.p99:
            front_idx.append(i)
    return sorted((valid[i] for i in front_idx), key=lambda r: r.metrics.p99)


def mark_pareto(rows: Sequence[SweepRow]) -> None:
    front = {id(r) for r in pareto_front(rows)}
    for r in rows:
        r.pareto = id(r) in front


# ---- export -----------------------------------------------------------------


def _num(x: float | None) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    return repr(float(x)) if isinstance(x, float) else str(x)


def write_sweep_csv(result: SweepResult, path: str | Path) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*result.knob_names, *METRIC_COLUMNS])
            for r in result.rows:
                m = r.metrics
                knobs = [r.knobs.get(n) for n in result.knob_names]
                w.writerow(
                    [
                        *knobs,
                        r.regime,
                        r.seed,
                        _num(m.p50),
                        _num(m.p95),
                        _num(m.p99),
                        _num(m.goodput),
                        _num(m.throughput),
                        m.completed,
                        m.failed,
                        _num(r.score),
                        int(r.pareto),
                    ]
                )
    except OSError as e:
        raise OSError(f"cannot write sweep CSV to {path}: {e}") from e
    return path


def _parse_knob(text: str) -> int | bool:
    if text in ("True", "False"):
        return text == "True"
    return int(text)


def read_sweep_csv(path: str | Path) -> SweepResult:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or "regime" not in header:
            raise ValueError(f"{path}: not a sweep CSV (missing header)")
        split = header.index("regime")
        names = header[:split]
        result = SweepResult(knob_names=names)
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = dict(zip(header, row))
                vals = {n: _parse_knob(rec[n]) for n in names}
                knobs = KnobVector.from_dict(vals)

                def f(key: str) -> float | None:
                    return float(rec[key]) if rec[key] != "" else None

                m = SegmentMetrics(
                    p50=f("p50"),
                    p95=f("p95"),
                    p99=f("p99"),
                    goodput=float(rec["goodput"]),
                    throughput=float(rec["throughput"]),
                    completed=int(rec["completed"]),
                    failed=int(rec["failed"]),
                    window=math.nan,
                )
                seed: int | str = rec["seed"]
                if isinstance(seed, str) and seed.lstrip("-").isdigit():
                    seed = int(seed)
                score = f("score")
                result.rows.append(
                    SweepRow(knobs, rec["regime"], seed, m, -math.inf if score is None else score, rec["pareto"] == "1")
                )
            except (KeyError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: malformed sweep row: {e}") from e
    return result


def sweep_to_json(result: SweepResult) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "sweep",
        "knob_names": result.knob_names,
        "rows": [
            {
                "knobs": r.knobs.to_dict(),
                "regime": r.regime,
                "seed": r.seed,
                "metrics": r.metrics.to_json(),
                "score": r.score if math.isfinite(r.score) else None,
                "pareto": r.pareto,
            }
            for r in result.rows
        ],
    }


def sweep_from_json(doc: dict) -> SweepResult:
    if doc.get("kind") != "sweep":
        raise ValueError("not a sweep document")
    result = SweepResult(knob_names=list(doc["knob_names"]))
    for row in doc["rows"]:
        knobs = KnobVector.from_dict(row["knobs"])
        score = row["score"]
        result.rows.append(
            SweepRow(
                knobs,
                row["regime"],
                row["seed"],
                SegmentMetrics.from_json(row["metrics"]),
                -math.inf if score is None else score,
                row["pareto"],
            )
        )
    return result


def write_json(doc: dict, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(doc, indent=2) + "\n")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    return path


def _score_out(x: float) -> float | None:
    return x if math.isfinite(x) else None


def _score_in(x: float | None) -> float:
    return -math.inf if x is None else float(x)


def _eval_to_json(ev: Evaluation) -> dict:
    return {
        "knobs": ev.knobs.to_dict(),
        "metrics": ev.metrics.to_json(),
        "score": _score_out(ev.score),
        "failed": ev.failed,
        "error": ev.error,
    }


def _eval_from_json(d: dict) -> Evaluation:
    return Evaluation(
        KnobVector.from_dict(d["knobs"]),
        SegmentMetrics.from_json(d["metrics"]),
        _score_in(d["score"]),
        d["failed"],
        d["error"],
    )


def step_to_json(step: TuningStep) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "step",
        "index": step.index,
        "current": _eval_to_json(step.current),
        "neighbors": [_eval_to_json(e) for e in step.neighbor_results],
        "moved_to": step.moved_to.to_dict() if step.moved_to else None,
        "best": step.best.to_dict(),
        "best_score": _score_out(step.best_score),
    }


def step_from_json(d: dict) -> TuningStep:
    return TuningStep(
        index=d["index"],
        current=_eval_from_json(d["current"]),
        neighbor_results=[_eval_from_json(e) for e in d["neighbors"]],
        moved_to=KnobVector.from_dict(d["moved_to"]) if d["moved_to"] else None,
        best=KnobVector.from_dict(d["best"]),
        best_score=_score_in(d["best_score"]),
    )


def trajectory_summary(traj: TuningTrajectory) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "summary",
        "objective": traj.objective,
        "slo": traj.slo,
        "steps": len(traj.steps),
        "segments": traj.segments,
        "moves": traj.moves,
        "best": traj.best.to_dict() if traj.best else None,
        "best_score": _score_out(traj.best_score),
        "final_metrics": traj.final_metrics.to_json() if traj.final_metrics else None,
        "final_score": _score_out(traj.final_score),
    }


def write_trajectory(traj: TuningTrajectory, path: str | Path, summary_path: str | Path | None = None) -> tuple[Path, Path]:
    """Steps as JSON lines in ``path``; the summary object in ``summary_path``."""
    path = Path(path)
    summary_path = Path(summary_path) if summary_path else path.with_name(path.stem + "_summary.json")
    try:
        with path.open("w") as fh:
            for s in traj.steps:
                fh.write(json.dumps(step_to_json(s)) + "\n")
    except OSError as e:
        raise OSError(f"cannot write trajectory to {path}: {e}") from e
    write_json(trajectory_summary(traj), summary_path)
    return path, summary_path


def read_trajectory(path: str | Path, summary_path: str | Path | None = None) -> TuningTrajectory:
    path = Path(path)
    summary_path = Path(summary_path) if summary_path else path.with_name(path.stem + "_summary.json")
    steps = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                steps.append(step_from_json(json.loads(line)))
            except (KeyError, ValueError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: malformed trajectory line: {e}") from e
    traj = TuningTrajectory(steps=steps)
    if summary_path.exists():
        s = json.loads(summary_path.read_text())
        traj.objective = s["objective"]
        traj.slo = s["slo"]
        traj.segments = s["segments"]
        traj.best = KnobVector.from_dict(s["best"]) if s["best"] else None
        traj.best_score = _score_in(s["best_score"])
        traj.final_metrics = SegmentMetrics.from_json(s["final_metrics"]) if s["final_metrics"] else None
        traj.final_score = _score_in(s["final_score"])
    return traj

