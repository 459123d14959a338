from __future__ import annotations

import os
import time

import httpx
import pytest

from conftest import free_port, stub_command
from slotuner.backend import BackendError, LiveBackend, LiveBackendConfig, MeasurementBackend
from slotuner.backend.live import BASE_URL_ENV, render_command, run_closed_loop, start_server
from slotuner.knobs import live_k0


def alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    # a zombie still answers kill(0); check its state
    try:
        with open(f"/proc/{pid}/stat") as fh:
            return fh.read().split()[2] != "Z"
    except FileNotFoundError:
        return False


def cfg_for(url: str, **kw) -> LiveBackendConfig:
    base = dict(base_url=url, model="stub-model", warmup_s=0.5, window_s=2.0, request_timeout_s=5.0)
    base.update(kw)
    return LiveBackendConfig(**base)


def test_render_command_placeholders():
    cfg = LiveBackendConfig(
        server_command="vllm serve {model} --port {port} --max-num-seqs {max_seqs} {spec_flags}",
        spec_model="draft",
    )
    argv = render_command(cfg, live_k0())
    assert argv[argv.index("--max-num-seqs") + 1] == "8"
    assert argv[argv.index("--num-speculative-tokens") + 1] == "8"
    assert argv[argv.index("--speculative-model") + 1] == "draft"
    off = render_command(cfg, live_k0().replace(spec_enabled=False))
    assert "--num-speculative-tokens" not in off and "--speculative-model" not in off


def test_command_template_validation():
    with pytest.raises(ValueError):
        LiveBackendConfig(server_command="serve --port {port}")
    with pytest.raises(ValueError):
        LiveBackendConfig(window_s=0)


def test_base_url_env_override(monkeypatch):
    monkeypatch.setenv(BASE_URL_ENV, "http://10.0.0.1:9999/")
    assert LiveBackendConfig().resolved_base_url() == "http://10.0.0.1:9999"
    monkeypatch.delenv(BASE_URL_ENV)
    assert LiveBackendConfig(base_url="http://h:{port}", port=81).resolved_base_url() == "http://h:81"


def test_backend_protocol():
    assert isinstance(LiveBackend(LiveBackendConfig(), 1.2), MeasurementBackend)


def test_closed_loop_bound_and_warmup(run_stub):
    stub = run_stub("--latency", "0.1", "--jitter", "0.05")
    cfg = cfg_for(stub.url, warmup_s=0.6, window_s=1.5)
    res = run_closed_loop(cfg, 4)
    assert res.max_in_flight <= 4
    assert stub.stats()["max_in_flight"] <= 4
    assert res.discarded_warmup > 0
    assert all(t.completion_time >= 0 for t in res.traces)
    assert all(t.ok for t in res.traces)
    assert res.issued == res.discarded_warmup + len(res.traces)


def test_timeouts_become_failed_traces(run_stub):
    stub = run_stub("--latency", "0.05", "--stall-every", "5", "--stall-s", "3")
    cfg = cfg_for(stub.url, warmup_s=0.0, window_s=1.5, request_timeout_s=0.4)
    be = LiveBackend(cfg, 1.2)
    seg = be.measure(live_k0().replace(conc=4))
    assert seg.metrics.failed > 0
    assert seg.metrics.valid
    # percentiles come only from successful requests, all far below the timeout
    assert seg.metrics.p99 < 0.4
    assert all(t.latency is None for t in seg.traces if not t.ok)


def test_all_stalled_gives_invalid_segment(run_stub):
    stub = run_stub("--latency", "0.05", "--stall-every", "1", "--stall-s", "5")
    cfg = cfg_for(stub.url, warmup_s=0.0, window_s=0.5, request_timeout_s=0.3)
    seg = LiveBackend(cfg, 1.2).measure(live_k0().replace(conc=2))
    assert not seg.metrics.valid and seg.failed and seg.metrics.failed > 0


def test_lifecycle_leaves_no_orphans():
    port = free_port()
    cfg = cfg_for(
        "http://127.0.0.1:{port}",
        port=port,
        server_command=stub_command("--latency 0.05"),
        spec_flags="--num-speculative-tokens {spec_tokens}",
        window_s=0.5,
        warmup_s=0.2,
    )
    be = LiveBackend(cfg, 1.2)
    seg = be.measure(live_k0())
    assert not seg.failed and seg.metrics.completed > 0 and seg.metrics.failed == 0
    assert not alive(seg.info["pid"])
    with pytest.raises(httpx.HTTPError):
        httpx.get(f"http://127.0.0.1:{port}/v1/models", timeout=0.5)


def test_startup_timeout_kills_server():
    port = free_port()
    cfg = cfg_for(
        "http://127.0.0.1:{port}",
        port=port,
        server_command=stub_command("--never-ready"),
        spec_flags="",
        startup_timeout_s=1.0,
        probe_interval_s=0.1,
    )
    with pytest.raises(BackendError):
        start_server(cfg, live_k0())
    seg = LiveBackend(cfg, 1.2).measure(live_k0())
    assert seg.failed and not seg.metrics.valid
    time.sleep(0.2)
    with pytest.raises(httpx.HTTPError):
        httpx.get(f"http://127.0.0.1:{port}/v1/models", timeout=0.5)


def test_server_exit_during_probe_is_a_failure():
    cfg = cfg_for(
        "http://127.0.0.1:{port}",
        port=free_port(),
        server_command="false {max_seqs} {spec_flags}",
        startup_timeout_s=5.0,
        probe_interval_s=0.05,
    )
    t0 = time.monotonic()
    seg = LiveBackend(cfg, 1.2).measure(live_k0())
    assert seg.failed and "exited" in seg.error
    assert time.monotonic() - t0 < 3.0


def test_stub_enforces_server_side_max_seqs(run_stub):
    stub = run_stub("--latency", "0.2", "--max-num-seqs", "2")
    res = run_closed_loop(cfg_for(stub.url, warmup_s=0.0, window_s=1.0), 6)
    # 6 in flight at the client but only 2 served at a time: ~10 rps instead of 30
    done = sum(1 for t in res.traces if t.ok)
    assert done <= 2 * 1.0 / 0.2 + 6
