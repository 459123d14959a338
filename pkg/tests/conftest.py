from __future__ import annotations

import socket
import subprocess
import sys
import time
from pathlib import Path

import httpx
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import slotuner.stub_server as stub_module  # noqa: E402

STUB = Path(stub_module.__file__)


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def stub_command(extra: str = "") -> str:
    """Server command template that launches the stub directly (no package import)."""
    return f"{sys.executable} {STUB} --port {{port}} --max-num-seqs {{max_seqs}} {{spec_flags}} {extra}".strip()


class RunningStub:
    def __init__(self, port: int, proc: subprocess.Popen) -> None:
        self.port = port
        self.proc = proc
        self.url = f"http://127.0.0.1:{port}"

    def stats(self) -> dict:
        return httpx.get(self.url + "/stats").json()


@pytest.fixture
def run_stub():
    procs = []

    def start(*args: str) -> RunningStub:
        port = free_port()
        proc = subprocess.Popen([sys.executable, str(STUB), "--port", str(port), *args])
        procs.append(proc)
        deadline = time.monotonic() + 10
        while time.monotonic() < deadline:
            try:
                httpx.get(f"http://127.0.0.1:{port}/stats", timeout=0.5)
                return RunningStub(port, proc)
            except httpx.HTTPError:
                time.sleep(0.05)
        raise RuntimeError("stub did not start")

    yield start
    for p in procs:
        p.terminate()
        p.wait(5)


def pytest_terminal_summary(terminalreporter):
    """One verdict line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_acceptance.py::test_criterion_" not in rep.nodeid:
                continue
            name = rep.nodeid.split("::")[-1]
            number = int(name.split("_")[2])
            detail = dict(rep.user_properties).get("criterion", "")
            lines.append((number, f"criterion {number:>2}: {'PASS' if outcome == 'passed' else 'FAIL'}  {detail}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
