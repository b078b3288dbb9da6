"""HTTP chat service over the dialogue loop.

JSON API:
    POST   /api/session                {"seed": 42}        -> {"session_id", "greeting"}
    POST   /api/session/<id>/message   {"text": "..."}     -> step result
    GET    /api/session/<id>/state                         -> {"context"}
    DELETE /api/session/<id>

Sessions live in memory; each session's steps are serialized behind its own
lock while the machine, grammar and database are shared read-only.  Static
files (the web chat build) are served from an optional directory.
"""

from __future__ import annotations

import json
import mimetypes
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .agent import Session, SessionEnded, Stack

_SESSION_RE = re.compile(r"^/api/session/([A-Za-z0-9_-]+)(/(message|state))?$")


class ChatService:
    def __init__(self, stack: Stack, confirm_actions: bool = False):
        self.stack = stack
        self.confirm_actions = confirm_actions
        self._lock = threading.Lock()
        self._sessions: dict[str, tuple[Session, threading.Lock]] = {}
        self._counter = 0

    def create(self, seed: int) -> dict:
        with self._lock:
            self._counter += 1
            sid = f"s{self._counter}"
            session = Session(self.stack, seed, confirm_actions=self.confirm_actions)
            self._sessions[sid] = (session, threading.Lock())
        return {"session_id": sid, "greeting": session.greeting,
                "agent_state": session.agent_state_text(),
                "context": session.state_text(), "seed": seed}

    def _get(self, sid: str) -> tuple[Session, threading.Lock]:
        with self._lock:
            entry = self._sessions.get(sid)
        if entry is None:
            raise KeyError(sid)
        return entry

    def message(self, sid: str, text: str) -> dict:
        session, lock = self._get(sid)
        with lock:
            result = session.step(text)
        return {
            "reply": result.reply, "agent_state": result.agent_state,
            "user_state": result.user_state, "context": result.context,
            "ended": result.ended, "invalid_count": result.invalid_count,
        }

    def state(self, sid: str) -> dict:
        session, lock = self._get(sid)
        with lock:
            return {"context": session.state_text(), "ended": session.ended,
                    "turns": len(session.history)}

    def delete(self, sid: str) -> None:
        with self._lock:
            if sid not in self._sessions:
                raise KeyError(sid)
            del self._sessions[sid]


def make_handler(service: ChatService, static_dir: str | None):
    static_root = Path(static_dir).resolve() if static_dir else None

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass

        def _json(self, code: int, obj) -> None:
            body = json.dumps(obj).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if length == 0:
                return {}
            try:
                return json.loads(self.rfile.read(length).decode("utf-8"))
            except json.JSONDecodeError:
                return {}

        def do_POST(self):
            if self.path == "/api/session":
                body = self._body()
                seed = body.get("seed", 0)
                if not isinstance(seed, int):
                    self._json(400, {"error": "seed must be an integer"})
                    return
                self._json(200, service.create(seed))
                return
            m = _SESSION_RE.match(self.path)
            if m and m.group(3) == "message":
                text = self._body().get("text")
                if not isinstance(text, str) or not text.strip():
                    self._json(400, {"error": "text is required"})
                    return
                try:
                    self._json(200, service.message(m.group(1), text))
                except KeyError:
                    self._json(404, {"error": "unknown session"})
                except SessionEnded:
                    self._json(409, {"error": "session has ended"})
                return
            self._json(404, {"error": "not found"})

        def do_GET(self):
            m = _SESSION_RE.match(self.path)
            if m and m.group(3) == "state":
                try:
                    self._json(200, service.state(m.group(1)))
                except KeyError:
                    self._json(404, {"error": "unknown session"})
                return
            if static_root is not None:
                self._static(self.path)
                return
            self._json(404, {"error": "not found"})

        def do_DELETE(self):
            m = _SESSION_RE.match(self.path)
            if m and m.group(3) is None:
                try:
                    service.delete(m.group(1))
                    self._json(200, {"ok": True})
                except KeyError:
                    self._json(404, {"error": "unknown session"})
                return
            self._json(404, {"error": "not found"})

        def _static(self, path: str) -> None:
            rel = path.split("?", 1)[0].lstrip("/") or "index.html"
            target = (static_root / rel).resolve()
            if not str(target).startswith(str(static_root)) or not target.is_file():
                self._json(404, {"error": "not found"})
                return
            body = target.read_bytes()
            ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    return Handler


def serve(stack: Stack, port: int, static_dir: str | None = None,
          confirm_actions: bool = False) -> ThreadingHTTPServer:
    """Build a ready-to-run server; the caller owns serve_forever/shutdown."""
    service = ChatService(stack, confirm_actions=confirm_actions)
    handler = make_handler(service, static_dir)
    return ThreadingHTTPServer(("0.0.0.0", port), handler)
