"""Tiny OpenAI-compatible chat server with programmable latency.

Used to exercise the live backend without a GPU::

    python -m slotuner.stub_server --port 8011 --latency 0.5 --max-num-seqs 8

``GET /stats`` reports request counts and the peak number of requests in
flight, which lets tests check the client's concurrency bound from the
server side.
"""

from __future__ import annotations

import argparse
import json
import random
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class StubState:
    def __init__(self, args: argparse.Namespace) -> None:
        self.args = args
        self.lock = threading.Lock()
        self.in_flight = 0
        self.max_in_flight = 0
        self.requests = 0
        self.stalled = 0
        self.slots = threading.BoundedSemaphore(args.max_num_seqs) if args.max_num_seqs > 0 else None
        self.rng = random.Random(args.seed)
        self.ready_at = time.monotonic() + args.startup_delay

    def service_time(self) -> float:
        a = self.args
        spec = a.num_speculative_tokens if a.num_speculative_tokens > 0 else 0
        with self.lock:
            jitter = self.rng.uniform(0.0, a.jitter) if a.jitter > 0 else 0.0
        return a.latency + a.spec_cost * spec + jitter

    def stats(self) -> dict:
        with self.lock:
            return {
                "requests": self.requests,
                "in_flight": self.in_flight,
                "max_in_flight": self.max_in_flight,
                "stalled": self.stalled,
            }


def make_handler(state: StubState) -> type[BaseHTTPRequestHandler]:
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args) -> None:
            pass

        def _send(self, code: int, payload: dict) -> None:
            data = json.dumps(payload).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self) -> None:
            if self.path == "/v1/models":
                if state.args.never_ready or time.monotonic() < state.ready_at:
                    self._send(503, {"error": "starting"})
                else:
                    self._send(200, {"object": "list", "data": [{"id": state.args.model, "object": "model"}]})
            elif self.path == "/stats":
                self._send(200, state.stats())
            else:
                self._send(404, {"error": "not found"})

        def do_POST(self) -> None:
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length) or b"{}")
            if self.path != "/v1/chat/completions":
                self._send(404, {"error": "not found"})
                return
            with state.lock:
                state.requests += 1
                n = state.requests
                state.in_flight += 1
                state.max_in_flight = max(state.max_in_flight, state.in_flight)
                stall = state.args.stall_every > 0 and n % state.args.stall_every == 0
                if stall:
                    state.stalled += 1
            try:
                if stall:
                    time.sleep(state.args.stall_s)
                if state.slots is not None:
                    state.slots.acquire()
                try:
                    time.sleep(state.service_time())
                finally:
                    if state.slots is not None:
                        state.slots.release()
                max_tokens = int(body.get("max_tokens", 16))
                self._send(
                    200,
                    {
                        "id": f"chatcmpl-{n}",
                        "object": "chat.completion",
                        "model": body.get("model", state.args.model),
                        "choices": [
                            {
                                "index": 0,
                                "message": {"role": "assistant", "content": "ok " * max_tokens},
                                "finish_reason": "length",
                            }
                        ],
                        "usage": {"prompt_tokens": 32, "completion_tokens": max_tokens, "total_tokens": 32 + max_tokens},
                    },
                )
            except (BrokenPipeError, ConnectionResetError):
                pass
            finally:
                with state.lock:
                    state.in_flight -= 1

    return Handler


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8011)
    p.add_argument("--model", default="stub-model")
    p.add_argument("--latency", type=float, default=0.5, help="base service time per request (s)")
    p.add_argument("--jitter", type=float, default=0.0, help="uniform extra latency in [0, jitter] (s)")
    p.add_argument("--spec-cost", type=float, default=0.0, help="extra seconds per speculative token")
    p.add_argument("--max-num-seqs", type=int, default=0, help="concurrent service slots; 0 = unlimited")
    p.add_argument("--num-speculative-tokens", type=int, default=0)
    p.add_argument("--speculative-model", default="")
    p.add_argument("--stall-every", type=int, default=0, help="every Nth request stalls for --stall-s")
    p.add_argument("--stall-s", type=float, default=60.0)
    p.add_argument("--startup-delay", type=float, default=0.0)
    p.add_argument("--never-ready", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    return p


def serve(args: argparse.Namespace) -> ThreadingHTTPServer:
    state = StubState(args)
    server = ThreadingHTTPServer((args.host, args.port), make_handler(state))
    server.daemon_threads = True
    server.state = state  # type: ignore[attr-defined]
    return server


def main(argv: list[str] | None = None) -> None:
    args, _unknown = build_parser().parse_known_args(argv)
    server = serve(args)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


if __name__ == "__main__":
    main()
