"""Hill-climbing control loop over measurement segments.

Each step measures the current knob vector and every one-hop neighbor, then
moves to the best neighbor if it beats the current score by at least
``delta``, or by any margin while the current point violates the SLO. The
best configuration seen is re-measured once at the end.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

from .backend import BackendError, MeasurementBackend, Segment, invalid_metrics
from .knobs import KnobSpace, KnobVector, clamp, neighbors
from .metrics import SegmentMetrics
from .scoring import SCORERS, ScoreWeights

logger = logging.getLogger(__name__)


@dataclass
class Evaluation:
    knobs: KnobVector
    metrics: SegmentMetrics
    score: float
    failed: bool = False
    error: str | None = None


@dataclass
class TuningStep:
    index: int
    current: Evaluation
    neighbor_results: list[Evaluation]
    moved_to: KnobVector | None
    best: KnobVector
    best_score: float

    @property
    def current_score(self) -> float:
        return self.current.score


@dataclass
class TuningTrajectory:
    steps: list[TuningStep] = field(default_factory=list)
    best: KnobVector | None = None
    best_score: float = -math.inf
    final_metrics: SegmentMetrics | None = None
    final_score: float = -math.inf
    segments: int = 0
    objective: str = "live"
    slo: float = 1.2

    @property
    def moves(self) -> int:
        return sum(1 for s in self.steps if s.moved_to is not None)


def decide_move(current_score: float, current_p99: float | None, best_neighbor_score: float, slo: float, delta: float) -> bool:
    """Move if the neighbor clears ``delta``, or beats us at all while we violate the SLO.

    A current point without a p99 (no successful requests) counts as violating.
    """
    if not best_neighbor_score > current_score:
        return False
    if best_neighbor_score - current_score >= delta:
        return True
    return current_p99 is None or current_p99 > slo


def _evaluate(
    backend: MeasurementBackend,
    knobs: KnobVector,
    step: int,
    scorer: Callable[[SegmentMetrics, KnobVector, float, ScoreWeights], float],
    slo: float,
    weights: ScoreWeights,
) -> Evaluation:
    try:
        seg: Segment = backend.measure(knobs, step=step)
    except BackendError as e:
        logger.warning("segment at %s failed: %s", knobs, e)
        return Evaluation(knobs, invalid_metrics(0.0), -math.inf, True, str(e))
    if seg.failed:
        return Evaluation(knobs, seg.metrics, -math.inf, True, seg.error)
    return Evaluation(knobs, seg.metrics, scorer(seg.metrics, knobs, slo, weights))


def run_tuning(
    backend: MeasurementBackend,
    space: KnobSpace,
    k0: KnobVector,
    budget: int,
    slo: float,
    delta: float,
    weights: ScoreWeights | None = None,
    *,
    objective: str | None = None,
    strict_alg1: bool = False,
    fail_fast: bool = False,
    on_step: Callable[[TuningStep], None] | None = None,
) -> TuningTrajectory:
    """Run ``budget`` hill-climbing steps from ``k0`` and re-measure the best point.

    ``objective`` picks the score ("live" or "sim"); it defaults to the
    backend's own. The sim objective decides moves on EMA p99. With
    ``strict_alg1`` only current points may become the best-so-far; otherwise
    any measured neighbor can. ``fail_fast`` raises BackendError if the very
    first segment cannot be measured.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not space.contains(k0):
        raise ValueError(f"k0 {k0} is outside the knob space")
    weights = weights or ScoreWeights()
    objective = objective or getattr(backend, "objective", "live")
    scorer = SCORERS[objective]

    def p99_of(m: SegmentMetrics) -> float | None:
        return m.p99_smoothed if objective == "sim" else m.p99

    traj = TuningTrajectory(objective=objective, slo=slo)
    current = clamp(space, k0)
    best, best_score = current, -math.inf

    for t in range(1, budget + 1):
        cur = _evaluate(backend, current, t, scorer, slo, weights)
        traj.segments += 1
        if fail_fast and t == 1 and cur.failed:
            raise BackendError(f"first segment failed: {cur.error}")
        if cur.score > best_score:
            best, best_score = current, cur.score

        results = []
        for nb in neighbors(space, current):
            ev = _evaluate(backend, nb, t, scorer, slo, weights)
            traj.segments += 1
            results.append(ev)
            if not strict_alg1 and ev.score > best_score:
                best, best_score = nb, ev.score

        moved = None
        if results:
            # first maximum in neighbor order wins ties
            star = max(results, key=lambda e: e.score)
            if decide_move(cur.score, p99_of(cur.metrics), star.score, slo, delta):
                moved = star.knobs
        step = TuningStep(t, cur, results, moved, best, best_score)
        traj.steps.append(step)
        logger.info(
            "step %d: %s score=%.4f p99=%s -> %s",
            t, current, cur.score, p99_of(cur.metrics), moved if moved else "stay",
        )
        if on_step:
            on_step(step)
        if moved is not None:
            current = moved

    final = _evaluate(backend, best, budget + 1, scorer, slo, weights)
    traj.segments += 1
    traj.best, traj.best_score = best, best_score
    traj.final_metrics, traj.final_score = final.metrics, final.score
    return traj
