"""Frame protocol for talking to an out-of-process execution worker.

Every message is a 4-byte big-endian length followed by that many bytes
of UTF-8 JSON. Requests carry {id, op, payload}; responses are flat:
{id, status, stdout, stderr, artifacts, duration} with status one of
ok/error/timeout/killed and artifacts mapping filename to base64 bytes.
A worker owns one execution session per process; the client spawns a
fresh process per session and the handshake pins the protocol version.
"""

from __future__ import annotations

import base64
import json
import struct
import subprocess
import threading
from dataclasses import dataclass
from typing import Any, BinaryIO, Sequence

from .backends import ExecutionResult
from .errors import ExecutorUnavailable, ProtocolError

PROTOCOL_VERSION = "exec/1"
MAX_FRAME_BYTES = 16 * 1024 * 1024
_HEADER = struct.Struct(">I")

RESPONSE_STATUSES = ("ok", "error", "timeout", "killed")


def write_frame(stream: BinaryIO, message: dict[str, Any]) -> None:
    data = json.dumps(message, sort_keys=True, separators=(",", ":")).encode("utf-8")
    if len(data) > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame of {len(data)} bytes exceeds the {MAX_FRAME_BYTES} cap")
    stream.write(_HEADER.pack(len(data)) + data)
    stream.flush()


def write_raw_frame(stream: BinaryIO, data: bytes) -> None:
    """Length-prefix arbitrary bytes; exists so tests can send bad payloads."""
    stream.write(_HEADER.pack(len(data)) + data)
    stream.flush()


def _read_exact(stream: BinaryIO, n: int) -> bytes | None:
    chunks: list[bytes] = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> dict[str, Any] | None:
    """One framed JSON object, or None on clean EOF."""
    header = stream.read(_HEADER.size)
    if not header:
        return None
    if len(header) < _HEADER.size:
        raise ProtocolError("truncated frame header")
    (length,) = _HEADER.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(f"declared frame of {length} bytes exceeds the cap")
    body = _read_exact(stream, length)
    if body is None:
        raise ProtocolError("truncated frame body")
    try:
        message = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise ProtocolError(f"frame body is not JSON: {exc}") from exc
    if not isinstance(message, dict):
        raise ProtocolError("frame body must be a JSON object")
    return message


def decode_artifacts(encoded: dict[str, str]) -> dict[str, bytes]:
    out: dict[str, bytes] = {}
    for name, blob in encoded.items():
        try:
            out[name] = base64.b64decode(blob.encode("ascii"), validate=True)
        except Exception as exc:
            raise ProtocolError(f"artifact {name!r} is not valid base64: {exc}") from exc
    return out


def encode_artifacts(artifacts: dict[str, bytes]) -> dict[str, str]:
    return {name: base64.b64encode(data).decode("ascii") for name, data in artifacts.items()}


# ---------------------------------------------------------------------------
# worker client


@dataclass(frozen=True)
class WorkerLimits:
    cpu_seconds: float = 5.0
    wall_seconds: float = 10.0


class WorkerProcess:
    """One spawned worker and its frame streams."""

    def __init__(self, command: Sequence[str]) -> None:
        try:
            self.proc = subprocess.Popen(
                list(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as exc:
            raise ExecutorUnavailable(f"cannot spawn worker {command!r}: {exc}") from exc
        self._lock = threading.Lock()
        self._next_id = 0

    def request(self, op: str, payload: dict[str, Any]) -> dict[str, Any]:
        with self._lock:
            self._next_id += 1
            req_id = f"q{self._next_id:04d}"
            assert self.proc.stdin and self.proc.stdout
            write_frame(self.proc.stdin, {"id": req_id, "op": op, "payload": payload})
            response = read_frame(self.proc.stdout)
        if response is None:
            raise ProtocolError(f"worker closed the stream during {op}")
        if response.get("id") != req_id:
            raise ProtocolError(
                f"response id {response.get('id')!r} does not match request {req_id}"
            )
        if response.get("status") not in RESPONSE_STATUSES:
            raise ProtocolError(f"unknown response status {response.get('status')!r}")
        return response

    def send_raw(self, data: bytes) -> dict[str, Any] | None:
        with self._lock:
            assert self.proc.stdin and self.proc.stdout
            write_raw_frame(self.proc.stdin, data)
            return read_frame(self.proc.stdout)

    def close(self, timeout: float = 5.0) -> None:
        if self.proc.poll() is None:
            try:
                if self.proc.stdin:
                    self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=timeout)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()

    @property
    def alive(self) -> bool:
        return self.proc.poll() is None


class WorkerExecutor:
    """ExecutorBackend that drives one worker process per session."""

    def __init__(
        self,
        command: Sequence[str],
        limits: WorkerLimits | None = None,
    ) -> None:
        self.command = list(command)
        self.limits = limits or WorkerLimits()
        self._worker: WorkerProcess | None = None

    def start_session(self, dataset: str | None = None) -> str:
        if self._worker is not None:
            self.end_session()
        self._worker = WorkerProcess(self.command)
        response = self._worker.request(
            "start_session",
            {
                "dataset": dataset,
                "cpu_seconds": self.limits.cpu_seconds,
                "wall_seconds": self.limits.wall_seconds,
            },
        )
        if response["status"] != "ok":
            detail = response.get("stderr", "")
            self._worker.close()
            self._worker = None
            raise ExecutorUnavailable(f"worker refused session: {detail}")
        if PROTOCOL_VERSION not in response.get("stdout", ""):
            self._worker.close()
            self._worker = None
            raise ProtocolError(
                f"worker did not announce protocol {PROTOCOL_VERSION} in the handshake"
            )
        return "worker-session"

    def execute(self, source: str) -> ExecutionResult:
        if self._worker is None:
            raise ExecutorUnavailable("no active worker session")
        response = self._worker.request("exec", {"source": source})
        return ExecutionResult(
            status=response["status"],
            stdout=response.get("stdout", ""),
            stderr=response.get("stderr", ""),
            artifacts=decode_artifacts(response.get("artifacts", {})),
            duration=float(response.get("duration", 0.0)),
        )

    def end_session(self) -> None:
        worker, self._worker = self._worker, None
        if worker is None:
            return
        try:
            if worker.alive:
                worker.request("end_session", {})
        except (ProtocolError, ExecutorUnavailable, OSError):
            pass
        finally:
            worker.close()
