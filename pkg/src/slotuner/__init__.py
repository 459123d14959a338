"""SLO-aware hill-climbing over LLM serving knobs, with a discrete-event serving simulator."""

from .controller import TuningTrajectory, run_tuning
from .knobs import KnobSpace, KnobVector, clamp, live_k0, live_space, neighbors, sim_k0, sim_space
from .metrics import RequestTrace, SegmentMetrics, percentile, summarize
from .scoring import ScoreWeights, score_live, score_sim
from .simulator import SimConfig, simulate_segment

__all__ = [
    "KnobSpace",
    "KnobVector",
    "RequestTrace",
    "ScoreWeights",
    "SegmentMetrics",
    "SimConfig",
    "TuningTrajectory",
    "clamp",
    "live_k0",
    "live_space",
    "neighbors",
    "percentile",
    "run_tuning",
    "score_live",
    "score_sim",
    "sim_k0",
    "sim_space",
    "simulate_segment",
    "summarize",
]
