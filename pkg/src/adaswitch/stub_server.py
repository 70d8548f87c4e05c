"""Minimal OpenAI-compatible chat-completions server for offline testing.

Responses are served from a queue of canned replies; every request body and
its headers are logged for inspection.
"""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any


@dataclass
class Canned:
    body: dict[str, Any] | str
    status: int = 200
    delay: float = 0.0


@dataclass
class LoggedRequest:
    path: str
    headers: dict[str, str]
    body: dict[str, Any] | None
    received_at: float = field(default_factory=time.monotonic)


def completion(content: str, logprobs: list[tuple[str, float]] | None = None, top: list[list[tuple[str, float]]] | None = None) -> dict[str, Any]:
    """Build a chat-completion body; ``top`` gives top_logprobs per token."""
    choice: dict[str, Any] = {"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}
    if logprobs is not None:
        entries = []
        for i, (tok, lp) in enumerate(logprobs):
            alts = top[i] if top and i < len(top) else []
            entries.append({"token": tok, "logprob": lp, "top_logprobs": [{"token": t, "logprob": v} for t, v in alts]})
        choice["logprobs"] = {"content": entries}
    return {
        "id": "stub",
        "object": "chat.completion",
        "choices": [choice],
        "usage": {"prompt_tokens": 10, "completion_tokens": len(logprobs) if logprobs else 1},
    }


class StubServer:
    """Serve canned replies on 127.0.0.1 from a background thread.

    >>> with StubServer() as srv:  # doctest: +SKIP
    ...     srv.enqueue(completion("Thought.\\nAction: Finish(1)"))
    """

    def __init__(self, default: Canned | None = None):
        self.queue: deque[Canned] = deque()
        self.requests: list[LoggedRequest] = []
        self.default = default or Canned(completion("No plan.\nAction: Finish(0)"))
        self._lock = threading.Lock()
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args: Any) -> None:
                pass

            def do_POST(self) -> None:
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                try:
                    body = json.loads(raw)
                except ValueError:
                    body = None
                with server._lock:
                    server.requests.append(LoggedRequest(self.path, dict(self.headers), body))
                    canned = server.queue.popleft() if server.queue else server.default
                if canned.delay:
                    time.sleep(canned.delay)
                payload = canned.body if isinstance(canned.body, str) else json.dumps(canned.body)
                data = payload.encode("utf-8")
                try:
                    self.send_response(canned.status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def enqueue(self, body: dict[str, Any] | str, status: int = 200, delay: float = 0.0) -> None:
        with self._lock:
            self.queue.append(Canned(body, status, delay))

    def start(self) -> "StubServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self) -> "StubServer":
        return self.start()

    def __exit__(self, *exc: Any) -> None:
        self.stop()


if __name__ == "__main__":
    with StubServer() as srv:
        print(f"stub listening on {srv.base_url}; Ctrl-C to stop")
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            pass
