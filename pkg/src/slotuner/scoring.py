"""Hardware-cost proxy and the goodput-minus-penalty scores used by the controller."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .knobs import KnobVector
from .metrics import SegmentMetrics

SIM_K_MAX = 16


@dataclass(frozen=True)
class ScoreWeights:
    w_conc: float = 0.01
    w_max: float = 0.01
    w_spec: float = 0.02
    lam: float = 5.0
    sim_w_W: float = 0.02
    sim_w_k: float = 0.005
    sim_violation_multiplier: float = 10.0

    def __post_init__(self) -> None:
        for name in ("w_conc", "w_max", "w_spec", "sim_w_W", "sim_w_k", "sim_violation_multiplier"):
            if getattr(self, name) < 0:
                raise ValueError(f"scoring weight {name} must be non-negative")
        if self.lam <= 0:
            raise ValueError("scoring weight lambda must be positive")


def hw_cost(k: KnobVector, w: ScoreWeights) -> float:
    spec = int(k["spec_tokens"]) if k.get("spec_enabled", True) else 0
    return w.w_conc * int(k["conc"]) + w.w_max * int(k["max_seqs"]) + w.w_spec * spec


def sim_hw_cost(k: KnobVector, w: ScoreWeights, k_max: int = SIM_K_MAX) -> float:
    # smaller k means more frequent verification, hence the (k_max - k) term
    return w.sim_w_W * int(k["W"]) + w.sim_w_k * (k_max - int(k["k"])) + w.w_max * int(k["B"]) / 4


def slo_penalty(p99: float, slo: float, lam: float) -> float:
    return lam * max(0.0, p99 - slo)


def score_live(m: SegmentMetrics, k: KnobVector, slo: float, w: ScoreWeights) -> float:
    if not m.valid:
        return -math.inf
    return m.goodput - slo_penalty(m.p99, slo, w.lam) - hw_cost(k, w)


def score_sim(m: SegmentMetrics, k: KnobVector, slo: float, w: ScoreWeights) -> float:
    """Simulator score: EMA p99 (when present) and a violation term scaled by the multiplier."""
    if not m.valid:
        return -math.inf
    penalty = w.sim_violation_multiplier * slo_penalty(m.p99_smoothed, slo, w.lam)
    return m.goodput - penalty - sim_hw_cost(k, w)


SCORERS = {"live": score_live, "sim": score_sim}
