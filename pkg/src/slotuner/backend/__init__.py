"""Measurement backends: one segment in, metrics and traces out."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

from ..knobs import KnobVector
from ..metrics import RequestTrace, SegmentMetrics


class BackendError(RuntimeError):
    """A segment could not be measured (server bring-up, simulator failure...)."""


@dataclass
class Segment:
    knobs: KnobVector
    metrics: SegmentMetrics
    traces: list[RequestTrace] = field(default_factory=list)
    error: str | None = None
    info: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.error is not None or not self.metrics.valid


@runtime_checkable
class MeasurementBackend(Protocol):
    objective: str
    descriptor: str

    def measure(self, knobs: KnobVector, *, step: int | None = None) -> Segment: ...


def invalid_metrics(window: float, failed: int = 0) -> SegmentMetrics:
    return SegmentMetrics(None, None, None, 0.0, 0.0, 0, failed, window)


from .sim import SimBackend  # noqa: E402
from .live import LiveBackend, LiveBackendConfig  # noqa: E402

__all__ = [
    "BackendError",
    "LiveBackend",
    "LiveBackendConfig",
    "MeasurementBackend",
    "Segment",
    "SimBackend",
    "invalid_metrics",
]
