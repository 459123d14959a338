"""Per-request traces, nearest-rank percentiles, goodput and segment summaries."""

from __future__ import annotations

import csv
import math
import threading
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path

TRACE_COLUMNS = (
    "issue_time_s",
    "completion_time_s",
    "latency_s",
    "ok",
    "prompt_tokens",
    "output_tokens",
)


class NoSuccessfulSamples(ValueError):
    """Raised when a percentile is requested over zero successful requests."""


@dataclass(frozen=True)
class RequestTrace:
    issue_time: float
    completion_time: float
    latency: float | None
    ok: bool = True
    prompt_tokens: int = 0
    output_tokens: int = 0

    @classmethod
    def success(cls, issue: float, done: float, prompt_tokens: int = 0, output_tokens: int = 0) -> RequestTrace:
        return cls(issue, done, done - issue, True, prompt_tokens, output_tokens)

    @classmethod
    def failure(cls, issue: float, done: float, prompt_tokens: int = 0) -> RequestTrace:
        return cls(issue, done, None, False, prompt_tokens, 0)


@dataclass(frozen=True)
class SegmentMetrics:
    p50: float | None
    p95: float | None
    p99: float | None
    goodput: float
    throughput: float
    completed: int
    failed: int
    window: float
    residual: int | None = None
    p99_ema: float | None = None

    @property
    def valid(self) -> bool:
        return self.p99 is not None

    @property
    def p99_smoothed(self) -> float | None:
        """EMA p99 when the backend tracks one, raw p99 otherwise."""
        return self.p99_ema if self.p99_ema is not None else self.p99

    def with_ema(self, value: float | None) -> SegmentMetrics:
        return replace(self, p99_ema=value)

    def to_json(self) -> dict:
        out = {
            "p50": self.p50,
            "p95": self.p95,
            "p99": self.p99,
            "goodput": self.goodput,
            "throughput": self.throughput,
            "completed": self.completed,
            "failed": self.failed,
            "window_s": self.window,
        }
        if self.residual is not None:
            out["residual"] = self.residual
        if self.p99_ema is not None:
            out["p99_ema"] = self.p99_ema
        return out

    @classmethod
    def from_json(cls, d: dict) -> SegmentMetrics:
        return cls(
            p50=d.get("p50"),
            p95=d.get("p95"),
            p99=d.get("p99"),
            goodput=float(d["goodput"]),
            throughput=float(d["throughput"]),
            completed=int(d["completed"]),
            failed=int(d["failed"]),
            window=float(d["window_s"]),
            residual=d.get("residual"),
            p99_ema=d.get("p99_ema"),
        )


@dataclass(frozen=True)
class EmaState:
    value: float | None = None
    beta: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"EMA beta must lie in (0, 1), got {self.beta}")


def percentile(latencies: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q*N)-th smallest sample (1-based)."""
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    n = len(latencies)
    if n == 0:
        raise NoSuccessfulSamples("no successful samples")
    ordered = sorted(latencies)
    # round() strips float fuzz such as 0.07 * 100 == 7.000000000000001
    rank = max(1, math.ceil(round(q * n, 9)))
    return ordered[rank - 1]


def goodput(traces: Iterable[RequestTrace], slo: float, window: float) -> float:
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    met = sum(1 for t in traces if t.ok and t.latency is not None and t.latency <= slo)
    return met / window


def summarize(traces: Sequence[RequestTrace], slo: float, window: float, residual: int | None = None) -> SegmentMetrics:
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    lat = sorted(t.latency for t in traces if t.ok and t.latency is not None)
    failed = len(traces) - len(lat)
    if not lat:
        return SegmentMetrics(None, None, None, 0.0, 0.0, 0, failed, window, residual)
    met = sum(1 for x in lat if x <= slo)
    return SegmentMetrics(
        p50=percentile(lat, 0.50),
        p95=percentile(lat, 0.95),
        p99=percentile(lat, 0.99),
        goodput=met / window,
        throughput=len(lat) / window,
        completed=len(lat),
        failed=failed,
        window=window,
        residual=residual,
    )


def ema_update(state: EmaState, sample: float) -> EmaState:
    if state.value is None:
        return EmaState(sample, state.beta)
    return EmaState(state.beta * sample + (1.0 - state.beta) * state.value, state.beta)


class TraceSink:
    """Append-safe trace collector for concurrent request workers."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._traces: list[RequestTrace] = []

    def append(self, trace: RequestTrace) -> None:
        with self._lock:
            self._traces.append(trace)

    def snapshot(self) -> list[RequestTrace]:
        with self._lock:
            return sorted(self._traces, key=lambda t: (t.completion_time, t.issue_time))

    def __len__(self) -> int:
        with self._lock:
            return len(self._traces)


def write_traces_csv(traces: Iterable[RequestTrace], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for t in traces:
            w.writerow(
                [
                    repr(t.issue_time),
                    repr(t.completion_time),
                    "" if t.latency is None else repr(t.latency),
                    int(t.ok),
                    t.prompt_tokens,
                    t.output_tokens,
                ]
            )
    return path


def read_traces_csv(path: str | Path) -> list[RequestTrace]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                RequestTrace(
                    issue_time=float(row["issue_time_s"]),
                    completion_time=float(row["completion_time_s"]),
                    latency=float(row["latency_s"]) if row["latency_s"] else None,
                    ok=row["ok"] in ("1", "true", "True"),
                    prompt_tokens=int(row["prompt_tokens"]),
                    output_tokens=int(row["output_tokens"]),
                )
            )
    return out
