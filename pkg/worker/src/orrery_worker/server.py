"""Stdio frame server: start_session / exec / end_session, one at a time.

One worker process hosts at most one session over its lifetime's span;
clients spawn a fresh worker per session. Malformed-but-aligned frames
get an error response and the loop keeps serving; a frame that breaks
stream alignment ends the process, because nothing after it can be
trusted. EOF on stdin is the normal shutdown signal.
"""

from __future__ import annotations

import sys
from typing import Any, BinaryIO

from . import PROTOCOL_VERSION
from .frames import FrameError, read_frame, write_frame
from .session import Session, SessionError


def _response(
    req_id: str,
    status: str,
    stdout: str = "",
    stderr: str = "",
    artifacts: dict[str, str] | None = None,
    duration: float = 0.0,
) -> dict[str, Any]:
    return {
        "id": req_id,
        "status": status,
        "stdout": stdout,
        "stderr": stderr,
        "artifacts": artifacts or {},
        "duration": duration,
    }


class Server:
    def __init__(self, stdin: BinaryIO, stdout: BinaryIO) -> None:
        self.stdin = stdin
        self.stdout = stdout
        self.session: Session | None = None

    def _handle(self, request: dict[str, Any]) -> dict[str, Any]:
        req_id = str(request.get("id", ""))
        op = request.get("op")
        payload = request.get("payload")
        if not isinstance(payload, dict):
            payload = {}

        if op == "start_session":
            if self.session is not None:
                return _response(req_id, "error", stderr="a session is already active")
            try:
                self.session = Session(
                    cpu_seconds=float(payload.get("cpu_seconds", 5.0)),
                    wall_seconds=float(payload.get("wall_seconds", 10.0)),
                    dataset=payload.get("dataset"),
                )
            except (SessionError, OSError, ValueError) as exc:
                return _response(req_id, "error", stderr=f"cannot start session: {exc}")
            return _response(req_id, "ok", stdout=f"{PROTOCOL_VERSION} session ready\n")

        if op == "exec":
            if self.session is None:
                return _response(req_id, "error", stderr="no active session")
            result = self.session.execute(str(payload.get("source", "")))
            return {"id": req_id, **result}

        if op == "end_session":
            if self.session is not None:
                self.session.close()
                self.session = None
            return _response(req_id, "ok")

        return _response(req_id, "error", stderr=f"unknown op {op!r}")

    def serve(self) -> int:
        try:
            while True:
                try:
                    request = read_frame(self.stdin)
                except FrameError as exc:
                    write_frame(
                        self.stdout, _response("", "error", stderr=f"malformed frame: {exc}")
                    )
                    if exc.recoverable:
                        continue
                    return 1
                if request is None:
                    return 0
                response = self._handle(request)
                try:
                    write_frame(self.stdout, response)
                except FrameError as exc:
                    write_frame(
                        self.stdout,
                        _response(
                            str(request.get("id", "")),
                            "error",
                            stderr=f"response too large to frame: {exc}",
                        ),
                    )
        finally:
            if self.session is not None:
                self.session.close()
                self.session = None


def main() -> int:
    return Server(sys.stdin.buffer, sys.stdout.buffer).serve()


if __name__ == "__main__":
    raise SystemExit(main())
