"""Local stand-in for a chat-completion endpoint, replaying recorded replies.

Each entry of ``replies`` answers one request, in order; the last entry
repeats. An entry is reply text, or one of the sentinels ``DROP`` (close the
connection without answering) and ``HANG`` (answer after ``hang_seconds``).
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

DROP = object()
HANG = object()

RECORDED = {
    "minipong": "s4: horizontal velocity of the ball\ns5: vertical velocity of the ball\n",
    "prose": "The cell seems to track how fast the ball moves up and down.",
}


class MockLLMServer:
    def __init__(self, replies, hang_seconds: float = 2.0):
        self.replies = list(replies)
        self.hang_seconds = hang_seconds
        self.requests: list[dict] = []
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler())
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def _next(self):
        with self._lock:
            i = len(self.requests) - 1
            return self.replies[min(i, len(self.replies) - 1)]

    def _handler(self):
        owner = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                body = self.rfile.read(int(self.headers.get("Content-Length", 0)))
                with owner._lock:
                    owner.requests.append(
                        {"headers": dict(self.headers), "body": json.loads(body or b"null")}
                    )
                reply = owner._next()
                if reply is DROP:
                    self.close_connection = True
                    self.connection.shutdown(2)
                    return
                if reply is HANG:
                    time.sleep(owner.hang_seconds)
                    reply = ""
                doc = {"choices": [{"message": {"role": "assistant", "content": reply}}]}
                data = json.dumps(doc).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        return Handler

    def __enter__(self) -> "MockLLMServer":
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()
