"""Closed-loop measurement against an OpenAI-compatible chat-completions server.

Each segment restarts the server with the segment's knobs (when a command
template is configured), waits for the readiness probe, drives ``conc``
concurrent workers through a warmup and a measurement window, then stops the
server unconditionally.
"""

from __future__ import annotations

import asyncio
import logging
import os
import shlex
import signal
import subprocess
import time
from dataclasses import dataclass, field

import httpx

from ..knobs import KnobVector
from ..metrics import RequestTrace, TraceSink, summarize
from . import BackendError, Segment, invalid_metrics

logger = logging.getLogger(__name__)

BASE_URL_ENV = "SLOTUNER_BASE_URL"
DEFAULT_PROMPT = (
    "You are an expert systems engineer. Explain, in a few sentences, how batching "
    "and request concurrency affect tail latency in an inference server."
)


@dataclass(frozen=True)
class LiveBackendConfig:
    base_url: str = "http://127.0.0.1:8000"
    model: str = "TinyLlama/TinyLlama-1.1B-Chat-v1.0"
    prompt: str = DEFAULT_PROMPT
    max_tokens: int = 64
    warmup_s: float = 10.0
    window_s: float = 30.0
    request_timeout_s: float = 30.0
    server_command: str | None = None
    spec_flags: str = "--speculative-model {spec_model} --num-speculative-tokens {spec_tokens}"
    spec_model: str = ""
    port: int = 8000
    ready_path: str = "/v1/models"
    chat_path: str = "/v1/chat/completions"
    startup_timeout_s: float = 600.0
    probe_interval_s: float = 0.5
    stop_timeout_s: float = 10.0
    failure_backoff_s: float = 0.05
    api_key: str | None = None
    server_log: str | None = None
    extra_env: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.warmup_s < 0:
            raise ValueError("live.warmup_s must be >= 0")
        if self.window_s <= 0:
            raise ValueError("live.window_s must be > 0")
        if self.request_timeout_s <= 0:
            raise ValueError("live.request_timeout_s must be > 0")
        if self.max_tokens < 1:
            raise ValueError("live.max_tokens must be >= 1")
        if self.server_command:
            if "{max_seqs}" not in self.server_command:
                raise ValueError("live.server_command needs a {max_seqs} placeholder")
            if "{spec_flags}" not in self.server_command and "{spec_tokens}" not in self.server_command:
                raise ValueError("live.server_command needs a {spec_flags} or {spec_tokens} placeholder")

    def resolved_base_url(self) -> str:
        url = os.environ.get(BASE_URL_ENV) or self.base_url
        return url.format(port=self.port).rstrip("/")


def render_command(cfg: LiveBackendConfig, knobs: KnobVector) -> list[str]:
    """Server argv for ``knobs``; speculative flags vanish when the toggle is off."""
    if not cfg.server_command:
        raise ValueError("no server_command configured")
    spec_tokens = int(knobs["spec_tokens"])
    subs = {
        "max_seqs": int(knobs["max_seqs"]),
        "spec_tokens": spec_tokens,
        "spec_model": cfg.spec_model,
        "model": cfg.model,
        "port": cfg.port,
    }
    spec_flags = cfg.spec_flags.format(**subs) if knobs.get("spec_enabled", True) else ""
    return shlex.split(cfg.server_command.format(spec_flags=spec_flags, **subs))


class ServerHandle:
    def __init__(self, proc: subprocess.Popen | None, argv: list[str] | None, stop_timeout: float) -> None:
        self.proc = proc
        self.argv = argv
        self.stop_timeout = stop_timeout

    @property
    def pid(self) -> int | None:
        return self.proc.pid if self.proc else None

    def stop(self) -> None:
        proc = self.proc
        if proc is None or proc.poll() is not None:
            return
        try:
            os.killpg(proc.pid, signal.SIGTERM)
        except ProcessLookupError:
            return
        try:
            proc.wait(self.stop_timeout)
        except subprocess.TimeoutExpired:
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            proc.wait()

    def __enter__(self) -> ServerHandle:
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def _headers(cfg: LiveBackendConfig) -> dict[str, str]:
    return {"Authorization": f"Bearer {cfg.api_key}"} if cfg.api_key else {}


def wait_ready(cfg: LiveBackendConfig, proc: subprocess.Popen | None = None) -> None:
    url = cfg.resolved_base_url() + cfg.ready_path
    deadline = time.monotonic() + cfg.startup_timeout_s
    with httpx.Client(timeout=max(cfg.probe_interval_s, 1.0), headers=_headers(cfg)) as client:
        while True:
            if proc is not None and proc.poll() is not None:
                raise BackendError(f"server exited with code {proc.returncode} during readiness probe")
            try:
                if client.get(url).is_success:
                    return
            except httpx.HTTPError:
                pass
            if time.monotonic() >= deadline:
                raise BackendError(f"server not ready at {url} after {cfg.startup_timeout_s}s")
            time.sleep(cfg.probe_interval_s)


def start_server(cfg: LiveBackendConfig, knobs: KnobVector) -> ServerHandle:
    """Launch the server for ``knobs`` and block until it answers the readiness probe.

    Without a command template the server is assumed to be managed externally
    and only the probe runs.
    """
    if not cfg.server_command:
        wait_ready(cfg)
        return ServerHandle(None, None, cfg.stop_timeout_s)
    argv = render_command(cfg, knobs)
    logger.info("starting server: %s", shlex.join(argv))
    log = open(cfg.server_log, "ab") if cfg.server_log else subprocess.DEVNULL
    try:
        proc = subprocess.Popen(
            argv,
            stdout=log,
            stderr=subprocess.STDOUT,
            start_new_session=True,
            env={**os.environ, **{k: str(v) for k, v in cfg.extra_env.items()}},
        )
    except OSError as e:
        raise BackendError(f"cannot launch server: {e}") from e
    finally:
        if cfg.server_log:
            log.close()
    handle = ServerHandle(proc, argv, cfg.stop_timeout_s)
    try:
        wait_ready(cfg, proc)
    except BaseException:
        handle.stop()
        raise
    return handle


@dataclass
class LoopResult:
    traces: list[RequestTrace]
    max_in_flight: int
    discarded_warmup: int
    issued: int


async def _closed_loop(cfg: LiveBackendConfig, concurrency: int) -> LoopResult:
    sink = TraceSink()
    body = {
        "model": cfg.model,
        "messages": [{"role": "user", "content": cfg.prompt}],
        "max_tokens": cfg.max_tokens,
    }
    url = cfg.resolved_base_url() + cfg.chat_path
    state = {"in_flight": 0, "max": 0, "discarded": 0, "issued": 0}
    limits = httpx.Limits(max_connections=concurrency, max_keepalive_connections=concurrency)
    clock = time.perf_counter
    start = clock()
    win_start = start + cfg.warmup_s
    win_end = win_start + cfg.window_s

    async with httpx.AsyncClient(limits=limits, timeout=None, headers=_headers(cfg)) as client:

        async def worker() -> None:
            while clock() < win_end:
                issued = clock()
                state["in_flight"] += 1
                state["issued"] += 1
                state["max"] = max(state["max"], state["in_flight"])
                ok, ptoks, otoks = False, 0, 0
                try:
                    resp = await asyncio.wait_for(client.post(url, json=body), cfg.request_timeout_s)
                    resp.raise_for_status()
                    usage = resp.json().get("usage") or {}
                    ptoks = int(usage.get("prompt_tokens", 0))
                    otoks = int(usage.get("completion_tokens", 0))
                    ok = True
                except (asyncio.TimeoutError, httpx.HTTPError, ValueError) as e:
                    logger.debug("request failed: %r", e)
                finally:
                    state["in_flight"] -= 1
                done = clock()
                if done < win_start:
                    state["discarded"] += 1
                elif ok:
                    sink.append(RequestTrace.success(issued - win_start, done - win_start, ptoks, otoks))
                else:
                    sink.append(RequestTrace.failure(issued - win_start, done - win_start, ptoks))
                if not ok and cfg.failure_backoff_s > 0:
                    await asyncio.sleep(cfg.failure_backoff_s)

        await asyncio.gather(*(worker() for _ in range(concurrency)))

    return LoopResult(sink.snapshot(), state["max"], state["discarded"], state["issued"])


def run_closed_loop(cfg: LiveBackendConfig, concurrency: int) -> LoopResult:
    """Keep exactly ``concurrency`` requests in flight through warmup and window.

    Trace times are relative to the start of the measurement window; anything
    that completed during warmup is dropped. Requests issued before the window
    closes are awaited (up to the request timeout) and kept.
    """
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")
    return asyncio.run(_closed_loop(cfg, concurrency))


class LiveBackend:
    objective = "live"

    def __init__(self, cfg: LiveBackendConfig, slo: float) -> None:
        self.cfg = cfg
        self.slo = slo
        self.segments = 0
        self.last_loop: LoopResult | None = None

    @property
    def descriptor(self) -> str:
        return f"live {self.cfg.resolved_base_url()} model={self.cfg.model}"

    def measure(self, knobs: KnobVector, *, step: int | None = None) -> Segment:
        self.segments += 1
        logger.info("segment %d: applying %s", self.segments, knobs)
        try:
            with start_server(self.cfg, knobs) as server:
                loop = run_closed_loop(self.cfg, int(knobs["conc"]))
                pid = server.pid
        except BackendError as e:
            logger.warning("segment %d failed: %s", self.segments, e)
            return Segment(knobs, invalid_metrics(self.cfg.window_s), error=str(e))
        self.last_loop = loop
        m = summarize(loop.traces, self.slo, self.cfg.window_s)
        info = {"max_in_flight": loop.max_in_flight, "discarded_warmup": loop.discarded_warmup, "pid": pid}
        err = None if m.valid else "no successful requests in window"
        return Segment(knobs, m, loop.traces, error=err, info=info)
