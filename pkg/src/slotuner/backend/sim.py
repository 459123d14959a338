from __future__ import annotations

import logging

import numpy as np

from ..knobs import KnobVector
from ..metrics import EmaState, ema_update, summarize
from ..simulator import SimConfig, simulate_segment
from . import Segment

logger = logging.getLogger(__name__)


def step_seed(root: int, step: int | None) -> int:
    """Seed for one controller step; every candidate in a step sees the same workload."""
    if step is None:
        return int(root)
    return int(np.random.SeedSequence([int(root), int(step)]).generate_state(1)[0])


class SimBackend:
    """Simulator-backed segments with a per-configuration EMA of p99.

    Each knob vector keeps its own smoothing state, so repeated measurements of
    the same configuration (e.g. the current point across steps) are damped.
    """

    objective = "sim"

    def __init__(self, cfg: SimConfig, slo: float) -> None:
        self.cfg = cfg
        self.slo = slo
        self.ema: dict[KnobVector, EmaState] = {}
        self.segments = 0

    @property
    def descriptor(self) -> str:
        return f"simulator regime={self.cfg.regime} seed={self.cfg.seed}"

    def measure(self, knobs: KnobVector, *, step: int | None = None) -> Segment:
        seed = step_seed(self.cfg.seed, step)
        run = simulate_segment(self.cfg, knobs, seed=seed)
        self.segments += 1
        m = summarize(run.traces, self.slo, run.elapsed, residual=run.residual)
        if m.valid:
            state = ema_update(self.ema.get(knobs, EmaState(beta=self.cfg.ema_beta)), m.p99)
            self.ema[knobs] = state
            m = m.with_ema(state.value)
        logger.debug("sim segment %s seed=%d p99=%s", knobs, seed, m.p99)
        return Segment(knobs, m, run.traces, info={"seed": seed, "arrivals": run.arrivals})
