"""Discrete-event simulator of a batched LLM server with speculative decoding.

Requests arrive (steady Poisson or bursty on/off), wait in a FCFS queue, and
are served in fixed-membership batches of up to ``B`` requests: a prefill
phase sized by the longest prompt, then a lockstep decode phase.

Speculative decode model, per round and per active sequence:

* the draft model proposes ``window = W * ceil(k / W)`` tokens in chunks of
  ``W``, or fewer if the sequence needs fewer (cost ``draft_s_per_token`` per
  drafted token);
* one verification pass checks them (``verify_base_s + verify_per_seq_s * n``);
* each drafted token is accepted with probability ``p_acc``; the first
  rejection discards the rest of the window and the batch pays one normal
  decode step (``decode_base + decode_per_seq * n``) for the corrected token.

With ``W == 0`` or speculation off every step is a normal decode step.

Random streams are split per role (arrivals, lengths, service), so two
segments with the same seed see the same workload regardless of knobs.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from collections.abc import Iterator
from dataclasses import dataclass, field, fields, replace
from typing import Literal

import numpy as np

from .knobs import KnobVector
from .metrics import RequestTrace

Regime = Literal["steady", "bursty"]


def lognormal_mu(mean: float, sigma: float) -> float:
    """Location parameter giving a log-normal with the requested mean."""
    return math.log(mean) - sigma * sigma / 2.0


@dataclass(frozen=True)
class SimConfig:
    regime: Regime = "steady"
    rate: float = 6.0
    burst_on_s: float = 2.0
    burst_off_s: float = 1.0
    burst_rate: float = 9.0

    prompt_mu: float = lognormal_mu(512.0, 0.5)
    prompt_sigma: float = 0.5
    prompt_min: int = 1
    prompt_max: int = 4096
    output_mu: float = lognormal_mu(64.0, 0.5)
    output_sigma: float = 0.5
    output_min: int = 1
    output_max: int = 1024

    prefill_tokens_per_s: float = 6000.0
    decode_base_s_per_token: float = 0.0005
    decode_per_seq_s_per_token: float = 0.0004
    draft_s_per_token: float = 0.00035
    verify_base_s: float = 0.0001
    verify_per_seq_s: float = 0.00005
    noise_rel_sd: float = 0.05

    p_acc: float = 0.7

    min_completions: int = 1500
    min_sim_time: float = 90.0
    seed: int = 0
    ema_beta: float = 0.5

    def __post_init__(self) -> None:
        if self.regime not in ("steady", "bursty"):
            raise ValueError(f"regime must be steady or bursty, got {self.regime!r}")
        if self.regime == "steady" and self.rate <= 0:
            raise ValueError("arrival rate must be positive")
        if self.regime == "bursty" and (self.burst_rate <= 0 or self.burst_on_s <= 0):
            raise ValueError("bursty regime needs positive burst_rate and burst_on_s")
        if self.burst_off_s < 0:
            raise ValueError("burst_off_s must be non-negative")
        if self.prompt_sigma < 0 or self.output_sigma < 0:
            raise ValueError("log-normal sigma must be non-negative")
        if not 1 <= self.prompt_min <= self.prompt_max:
            raise ValueError("prompt clamp bounds must satisfy 1 <= min <= max")
        if not 1 <= self.output_min <= self.output_max:
            raise ValueError("output clamp bounds must satisfy 1 <= min <= max")
        if not 0.0 <= self.p_acc <= 1.0:
            raise ValueError("p_acc must lie in [0, 1]")
        if self.prefill_tokens_per_s <= 0:
            raise ValueError("prefill_tokens_per_s must be positive")
        for f in ("decode_base_s_per_token", "decode_per_seq_s_per_token", "draft_s_per_token",
                  "verify_base_s", "verify_per_seq_s", "noise_rel_sd", "min_sim_time"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be non-negative")
        if self.min_completions < 0:
            raise ValueError("min_completions must be non-negative")
        if not 0.0 < self.ema_beta < 1.0:
            raise ValueError("ema_beta must lie in (0, 1)")

    @property
    def mean_rate(self) -> float:
        if self.regime == "steady":
            return self.rate
        return self.burst_rate * self.burst_on_s / (self.burst_on_s + self.burst_off_s)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def with_seed(self, seed: int) -> SimConfig:
        return replace(self, seed=int(seed))


@dataclass(frozen=True)
class BatchRecord:
    members: tuple[int, ...]
    formed_at: float
    prefill_s: float
    decode_s: float

    @property
    def done_at(self) -> float:
        return self.formed_at + self.prefill_s + self.decode_s


@dataclass
class SegmentRun:
    traces: list[RequestTrace]
    batches: list[BatchRecord]
    arrivals: int
    residual: int
    elapsed: float
    completed_ids: list[int] = field(default_factory=list)


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    arr, lens, svc = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(arr), np.random.default_rng(lens), np.random.default_rng(svc)


def iter_arrivals(cfg: SimConfig, rng: np.random.Generator, block: int = 1024) -> Iterator[float]:
    """Unbounded, increasing arrival times.

    Bursty arrivals are a Poisson process at ``burst_rate`` in "on-time", mapped
    to wall time by inserting an off period after every ``burst_on_s`` of on-time.
    """
    if cfg.regime == "steady":
        rate, on, off = cfg.rate, math.inf, 0.0
    else:
        rate, on, off = cfg.burst_rate, cfg.burst_on_s, cfg.burst_off_s
    tau = 0.0
    while True:
        for gap in rng.exponential(1.0 / rate, size=block):
            tau += float(gap)
            if off > 0.0:
                yield tau + math.floor(tau / on) * off
            else:
                yield tau


def sample_arrivals(cfg: SimConfig, horizon: float, rng: np.random.Generator) -> list[float]:
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    out = []
    for t in iter_arrivals(cfg, rng):
        if t > horizon:
            break
        out.append(t)
    return out


def sample_lengths(cfg: SimConfig, rng: np.random.Generator) -> tuple[int, int]:
    p = rng.lognormal(cfg.prompt_mu, cfg.prompt_sigma)
    o = rng.lognormal(cfg.output_mu, cfg.output_sigma)
    prompt = min(cfg.prompt_max, max(cfg.prompt_min, int(round(p))))
    output = min(cfg.output_max, max(cfg.output_min, int(round(o))))
    return prompt, output


def noise_factor(cfg: SimConfig, rng: np.random.Generator) -> float:
    """Multiplicative jitter ``1 + N(0, sd)`` truncated at 3 sd; one normal is always drawn."""
    z = float(rng.standard_normal())
    sd = cfg.noise_rel_sd
    if sd == 0.0:
        return 1.0
    z = max(-3.0, min(3.0, z))
    return max(1e-3, 1.0 + sd * z)


def prefill_time(prompt_tokens: list[int] | np.ndarray, cfg: SimConfig, rng: np.random.Generator) -> float:
    base = max(prompt_tokens) / cfg.prefill_tokens_per_s
    return base * noise_factor(cfg, rng)


def speculation_window(W: int, k: int) -> int:
    """Drafted tokens per verification: k rounded up to whole chunks of W."""
    return W * -(-k // W)


def decode_time(
    output_tokens: list[int] | np.ndarray,
    W: int,
    k: int,
    cfg: SimConfig,
    rng: np.random.Generator,
    speculative: bool = True,
) -> tuple[float, np.ndarray]:
    """Decode-phase duration and each member's completion offset (seconds).

    Draw order: one normal for the noise factor, then (speculative only) a
    ``(max_output, n_members, window)`` block of uniforms indexed by
    ``[round, member, draft position]``.
    """
    lens = np.asarray(output_tokens, dtype=np.int64)
    n = lens.size
    factor = noise_factor(cfg, rng)
    db, ds = cfg.decode_base_s_per_token, cfg.decode_per_seq_s_per_token

    if not speculative or W <= 0:
        steps = int(lens.max())
        idx = np.arange(1, steps + 1)
        active = (lens[None, :] >= idx[:, None]).sum(axis=1)
        cum = np.cumsum(db + ds * active)
        offsets = cum[lens - 1]
        return float(cum[-1]) * factor, offsets * factor

    if k < 1:
        raise ValueError("verifier cadence k must be >= 1")
    window = speculation_window(W, k)
    rounds = int(lens.max())
    u = rng.random((rounds, n, window))
    acc = u < cfg.p_acc
    accepted = np.cumprod(acc, axis=2).sum(axis=2)  # leading accepted drafts
    rejected = accepted < window
    committed = accepted + rejected
    cum_tok = np.cumsum(committed, axis=0)
    done = cum_tok >= lens[None, :]
    finish = done.argmax(axis=0)  # every member finishes by round max(lens)
    r_idx = np.arange(rounds)
    alive = r_idx[:, None] <= finish[None, :]
    need = lens[None, :] - np.vstack([np.zeros((1, n), dtype=np.int64), cum_tok[:-1]])
    # a rejection only costs a correction step if the member still needed tokens
    corrects = alive & rejected & (accepted < need)
    n_active = alive.sum(axis=1)
    # the draft model stops early for members that need fewer than a full window
    drafted = np.where(alive, np.minimum(window, need), 0).sum(axis=1)
    cost = (
        cfg.draft_s_per_token * drafted
        + cfg.verify_base_s
        + cfg.verify_per_seq_s * n_active
        + corrects.any(axis=1) * (db + ds * n_active)
    )
    used = int(finish.max()) + 1
    cum = np.cumsum(cost[:used])
    offsets = cum[finish]
    return float(cum[-1]) * factor, offsets * factor


def form_batch(queue_arrivals: list[float], B: int, max_wait_s: float, now: float) -> int | float:
    """Decide what an idle server does with the current queue.

    Returns the number of requests to take from the head of the queue, or the
    absolute time at which to decide again (wait-expiry for the head request).
    Returns 0 for an empty queue.
    """
    q = len(queue_arrivals)
    if q == 0:
        return 0
    if q >= B:
        return B
    deadline = queue_arrivals[0] + max_wait_s
    if max_wait_s <= 0 or now >= deadline - 1e-12:
        return q
    return deadline


ARRIVAL, BATCH_START, BATCH_COMPLETE = 0, 1, 2


def simulate_segment(cfg: SimConfig, knobs: KnobVector, seed: int | None = None) -> SegmentRun:
    """Run the event loop until both stop minimums are met.

    Stops at the first batch completion where completions >= min_completions
    and simulated time >= min_sim_time. Requests queued or in service then are
    reported as ``residual``.
    """
    if cfg.mean_rate <= 0:
        raise ValueError("arrival rate must be positive for a segment to terminate")
    W = int(knobs.get("W", 0))
    k = int(knobs.get("k", 2))
    B = int(knobs["B"])
    if B < 1:
        raise ValueError("batch size B must be >= 1")
    max_wait_s = int(knobs.get("max_wait_ms", 0)) / 1000.0
    speculative = W > 0 and bool(knobs.get("spec_enabled", True))

    arr_rng, len_rng, svc_rng = _streams(cfg.seed if seed is None else seed)
    arrivals = iter_arrivals(cfg, arr_rng)

    arrival_t: list[float] = []
    prompts: list[int] = []
    outputs: list[int] = []
    queue: deque[int] = deque()
    traces: list[RequestTrace] = []
    completed_ids: list[int] = []
    batches: list[BatchRecord] = []

    events: list[tuple[float, int, int]] = []
    seq = 0

    def push(t: float, kind: int) -> None:
        nonlocal seq
        heapq.heappush(events, (t, seq, kind))
        seq += 1

    push(next(arrivals), ARRIVAL)
    busy = False
    pending_wakeup: float | None = None
    now = 0.0
    in_service: tuple[int, ...] = ()

    def try_start(now: float) -> None:
        nonlocal busy, pending_wakeup, in_service
        head = [arrival_t[i] for i in itertools.islice(queue, B)]
        decision = form_batch(head, B, max_wait_s, now)
        if decision == 0:
            return
        if isinstance(decision, float):
            if pending_wakeup is None or decision < pending_wakeup:
                pending_wakeup = decision
                push(decision, BATCH_START)
            return
        members = tuple(queue.popleft() for _ in range(int(decision)))
        pre = prefill_time([prompts[i] for i in members], cfg, svc_rng)
        dec, offsets = decode_time([outputs[i] for i in members], W, k, cfg, svc_rng, speculative)
        start = now + pre
        for rid, off in zip(members, offsets):
            done = start + float(off)
            traces.append(RequestTrace.success(arrival_t[rid], done, prompts[rid], outputs[rid]))
            completed_ids.append(rid)
        batches.append(BatchRecord(members, now, pre, dec))
        in_service = members
        busy = True
        pending_wakeup = None
        push(now + pre + dec, BATCH_COMPLETE)

    n_done = 0
    while events:
        now, _, kind = heapq.heappop(events)
        if kind == ARRIVAL:
            rid = len(arrival_t)
            arrival_t.append(now)
            p, o = sample_lengths(cfg, len_rng)
            prompts.append(p)
            outputs.append(o)
            queue.append(rid)
            push(next(arrivals), ARRIVAL)
            if not busy:
                try_start(now)
        elif kind == BATCH_START:
            if pending_wakeup is not None and now >= pending_wakeup:
                pending_wakeup = None
            if not busy:
                try_start(now)
        else:
            busy = False
            n_done += len(in_service)
            in_service = ()
            if n_done >= cfg.min_completions and now >= cfg.min_sim_time:
                break
            try_start(now)

    # completions recorded at batch formation; keep those finished by the cutoff
    keep = [i for i, t in enumerate(traces) if t.completion_time <= now]
    traces = [traces[i] for i in keep]
    completed_ids = [completed_ids[i] for i in keep]
    order = np.argsort([t.completion_time for t in traces], kind="stable")
    traces = [traces[i] for i in order]
    completed_ids = [completed_ids[i] for i in order]
    n_arrived = len(arrival_t)
    return SegmentRun(
        traces=traces,
        batches=batches,
        arrivals=n_arrived,
        residual=n_arrived - len(traces),
        elapsed=now,
        completed_ids=completed_ids,
    )
