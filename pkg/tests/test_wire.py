"""Frame protocol plumbing and the worker-executor client."""

from __future__ import annotations

import io
import struct
import sys
from pathlib import Path

import pytest

from orrery.errors import ExecutorUnavailable, ProtocolError
from orrery.wire import (
    MAX_FRAME_BYTES,
    WorkerExecutor,
    WorkerLimits,
    WorkerProcess,
    decode_artifacts,
    encode_artifacts,
    read_frame,
    write_frame,
)

_STUB = Path(__file__).parent / "stub_worker.py"


def _stub_command(mode: str = "ok") -> list[str]:
    return [sys.executable, str(_STUB), mode]


# -- framing ---------------------------------------------------------------


def test_frame_roundtrip():
    buf = io.BytesIO()
    message = {"id": "q1", "op": "exec", "payload": {"source": "x = 1é"}}
    write_frame(buf, message)
    buf.seek(0)
    assert read_frame(buf) == message
    assert read_frame(buf) is None  # clean EOF


def test_frame_sequencing():
    buf = io.BytesIO()
    for n in range(5):
        write_frame(buf, {"n": n})
    buf.seek(0)
    assert [read_frame(buf)["n"] for _ in range(5)] == list(range(5))


def test_truncated_header_and_body():
    buf = io.BytesIO(b"\x00\x00")
    with pytest.raises(ProtocolError, match="header"):
        read_frame(buf)
    buf = io.BytesIO(struct.pack(">I", 10) + b"abc")
    with pytest.raises(ProtocolError, match="body"):
        read_frame(buf)


def test_oversized_declared_frame():
    buf = io.BytesIO(struct.pack(">I", MAX_FRAME_BYTES + 1))
    with pytest.raises(ProtocolError, match="cap"):
        read_frame(buf)


def test_non_json_and_non_object_frames():
    buf = io.BytesIO()
    raw = b"not json"
    buf.write(struct.pack(">I", len(raw)) + raw)
    buf.seek(0)
    with pytest.raises(ProtocolError, match="not JSON"):
        read_frame(buf)
    buf = io.BytesIO()
    raw = b"[1, 2]"
    buf.write(struct.pack(">I", len(raw)) + raw)
    buf.seek(0)
    with pytest.raises(ProtocolError, match="object"):
        read_frame(buf)


def test_artifact_codec_roundtrip():
    artifacts = {"a.svg": b"<svg/>", "b.bin": bytes(range(256))}
    assert decode_artifacts(encode_artifacts(artifacts)) == artifacts
    with pytest.raises(ProtocolError):
        decode_artifacts({"x": "@@@not-base64@@@"})


# -- worker client ---------------------------------------------------------------


def test_worker_executor_happy_path():
    executor = WorkerExecutor(_stub_command())
    try:
        executor.start_session()
        result = executor.execute("x = 1")
        assert result.status == "ok"
        assert result.stdout == "ran 5 bytes\n"
        assert result.artifacts == {}
        result = executor.execute("make artifact")
        assert result.artifacts == {"echo.txt": b"make artifact"}
    finally:
        executor.end_session()


def test_worker_executor_requires_session():
    executor = WorkerExecutor(_stub_command())
    with pytest.raises(ExecutorUnavailable):
        executor.execute("x = 1")


def test_worker_refusing_session():
    executor = WorkerExecutor(_stub_command("refuse"))
    with pytest.raises(ExecutorUnavailable, match="no capacity"):
        executor.start_session()


def test_worker_missing_protocol_version():
    executor = WorkerExecutor(_stub_command("noversion"))
    with pytest.raises(ProtocolError, match="exec/1"):
        executor.start_session()


def test_worker_bad_response_id():
    executor = WorkerExecutor(_stub_command("bad_id"))
    with pytest.raises(ProtocolError, match="does not match"):
        executor.start_session()


def test_worker_unknown_status():
    executor = WorkerExecutor(_stub_command("bad_status"))
    try:
        executor.start_session()
        with pytest.raises(ProtocolError, match="status"):
            executor.execute("x = 1")
    finally:
        executor.end_session()


def test_worker_spawn_failure():
    with pytest.raises(ExecutorUnavailable):
        WorkerProcess(["/nonexistent/worker-binary"])


def test_worker_process_survives_malformed_frame():
    worker = WorkerProcess(_stub_command())
    try:
        response = worker.send_raw(b"garbage bytes")
        assert response is not None
        assert response["status"] == "error"
        assert worker.alive
        # The stream stays usable afterward.
        ok = worker.request("start_session", {"dataset": None})
        assert ok["status"] == "ok"
    finally:
        worker.close()


def test_worker_unknown_op_is_error_response():
    worker = WorkerProcess(_stub_command())
    try:
        response = worker.request("dance", {})
        assert response["status"] == "error"
        assert "unknown op" in response["stderr"]
    finally:
        worker.close()


def test_limits_defaults():
    limits = WorkerLimits()
    assert limits.cpu_seconds == 5.0
    assert limits.wall_seconds == 10.0
