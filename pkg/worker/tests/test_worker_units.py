"""Unit coverage below the protocol surface: frames, cells, sessions, server."""

from __future__ import annotations

import io
import struct

import pytest

from orrery_worker.child import run_cell
from orrery_worker.frames import MAX_FRAME_BYTES, FrameError, read_frame, write_frame
from orrery_worker.server import Server
from orrery_worker.session import Session

# ---------------------------------------------------------------------------
# framing


def test_frame_roundtrip():
    buf = io.BytesIO()
    write_frame(buf, {"id": "a", "op": "exec", "payload": {"source": "1"}})
    write_frame(buf, {"id": "b"})
    buf.seek(0)
    assert read_frame(buf) == {"id": "a", "op": "exec", "payload": {"source": "1"}}
    assert read_frame(buf) == {"id": "b"}
    assert read_frame(buf) is None


def test_bad_json_frame_is_recoverable():
    buf = io.BytesIO(struct.pack(">I", 4) + b"nope")
    with pytest.raises(FrameError) as info:
        read_frame(buf)
    assert info.value.recoverable


def test_non_object_frame_is_recoverable():
    buf = io.BytesIO(struct.pack(">I", 2) + b"[]")
    with pytest.raises(FrameError) as info:
        read_frame(buf)
    assert info.value.recoverable


def test_truncated_and_oversized_frames_are_fatal():
    with pytest.raises(FrameError) as info:
        read_frame(io.BytesIO(struct.pack(">I", 10) + b"short"))
    assert not info.value.recoverable

    with pytest.raises(FrameError) as info:
        read_frame(io.BytesIO(struct.pack(">I", MAX_FRAME_BYTES + 1)))
    assert not info.value.recoverable


# ---------------------------------------------------------------------------
# cell semantics (in-process, no child)


def test_run_cell_prints_and_persists():
    env: dict = {"__builtins__": __builtins__}
    result = run_cell("x = 2\nprint('set')", env)
    assert result == {"status": "ok", "stdout": "set\n", "stderr": ""}
    result = run_cell("x * 3", env)
    assert result["stdout"] == "6\n"


def test_run_cell_trailing_none_prints_nothing():
    result = run_cell("print('only')", {"__builtins__": __builtins__})
    assert result["stdout"] == "only\n"


def test_run_cell_error_keeps_state():
    env: dict = {"__builtins__": __builtins__}
    run_cell("x = 41", env)
    result = run_cell("no_such_name", env)
    assert result["status"] == "error"
    assert "NameError" in result["stderr"]
    assert env["x"] == 41


def test_run_cell_syntax_error():
    result = run_cell("def broken(:", {"__builtins__": __builtins__})
    assert result["status"] == "error"
    assert "SyntaxError" in result["stderr"]


# ---------------------------------------------------------------------------
# sessions (real child process)


@pytest.fixture()
def session():
    s = Session(cpu_seconds=5.0, wall_seconds=10.0)
    yield s
    s.close()


def test_session_executes_and_times(session):
    result = session.execute("print('hello')")
    assert result["status"] == "ok"
    assert result["stdout"] == "hello\n"
    assert result["duration"] > 0.0
    assert result["artifacts"] == {}


def test_session_collects_nested_and_modified_artifacts(session):
    result = session.execute(
        "import os\nos.makedirs('sub', exist_ok=True)\n"
        "open('sub/a.txt', 'w').write('one')"
    )
    assert sorted(result["artifacts"]) == ["sub/a.txt"]

    result = session.execute("open('sub/a.txt', 'w').write('two')")
    assert sorted(result["artifacts"]) == ["sub/a.txt"]

    result = session.execute("pass")
    assert result["artifacts"] == {}


def test_session_error_cell_still_reports_artifacts(session):
    result = session.execute("open('kept.txt', 'w').write('data')\nraise RuntimeError('x')")
    assert result["status"] == "error"
    assert "RuntimeError" in result["stderr"]
    assert sorted(result["artifacts"]) == ["kept.txt"]


def test_session_dataset_is_linked_not_captured(tmp_path):
    dataset = tmp_path / "ds"
    dataset.mkdir()
    (dataset / "x.txt").write_text("payload", encoding="utf-8")
    s = Session(cpu_seconds=5.0, wall_seconds=10.0, dataset=str(dataset))
    try:
        result = s.execute("print(open('dataset/x.txt').read())")
        assert result["status"] == "ok"
        assert result["stdout"] == "payload\n"
        assert result["artifacts"] == {}
    finally:
        s.close()


def test_session_wall_breach_then_gone():
    s = Session(cpu_seconds=5.0, wall_seconds=0.5)
    try:
        result = s.execute("import time\ntime.sleep(30)")
        assert result["status"] == "timeout"
        assert "wall limit" in result["stderr"]
        assert result["duration"] < 2.0

        result = s.execute("print('after')")
        assert result["status"] == "killed"
    finally:
        s.close()


def test_session_cpu_breach_reports_timeout():
    s = Session(cpu_seconds=1.0, wall_seconds=8.0)
    try:
        result = s.execute("while True:\n    pass")
        assert result["status"] == "timeout"
        assert "cpu limit" in result["stderr"]
        assert result["duration"] < 2.0
    finally:
        s.close()


def test_session_close_is_idempotent(session):
    session.close()
    session.close()


# ---------------------------------------------------------------------------
# server loop (in-memory stdio)


def drive(messages: list) -> tuple[int, list[dict]]:
    stdin = io.BytesIO()
    for message in messages:
        if isinstance(message, bytes):
            stdin.write(struct.pack(">I", len(message)) + message)
        else:
            write_frame(stdin, message)
    stdin.seek(0)
    stdout = io.BytesIO()
    code = Server(stdin, stdout).serve()
    stdout.seek(0)
    responses = []
    while True:
        frame = read_frame(stdout)
        if frame is None:
            break
        responses.append(frame)
    return code, responses


def req(req_id: str, op: str, payload: dict | None = None) -> dict:
    return {"id": req_id, "op": op, "payload": payload or {}}


def test_server_session_lifecycle():
    code, responses = drive(
        [
            req("1", "start_session"),
            req("2", "exec", {"source": "1 + 1"}),
            req("3", "end_session"),
        ]
    )
    assert code == 0
    assert [r["id"] for r in responses] == ["1", "2", "3"]
    assert responses[0]["status"] == "ok"
    assert "exec/1" in responses[0]["stdout"]
    assert responses[1]["status"] == "ok"
    assert responses[1]["stdout"].strip() == "2"
    assert responses[2]["status"] == "ok"


def test_server_rejects_second_session_and_blind_exec():
    code, responses = drive(
        [
            req("1", "exec", {"source": "1"}),
            req("2", "start_session"),
            req("3", "start_session"),
            req("4", "end_session"),
            req("5", "end_session"),
        ]
    )
    assert code == 0
    assert responses[0]["status"] == "error"
    assert "no active session" in responses[0]["stderr"]
    assert responses[1]["status"] == "ok"
    assert responses[2]["status"] == "error"
    assert "already active" in responses[2]["stderr"]
    assert responses[3]["status"] == "ok"
    assert responses[4]["status"] == "ok"  # ending twice is harmless


def test_server_unknown_op_and_missing_id():
    code, responses = drive([{"op": "dance"}])
    assert code == 0
    assert responses[0]["id"] == ""
    assert responses[0]["status"] == "error"
    assert "unknown op" in responses[0]["stderr"]


def test_server_survives_malformed_frame():
    code, responses = drive([b"this is not json", req("2", "start_session"), req("3", "end_session")])
    assert code == 0
    assert responses[0]["status"] == "error"
    assert "malformed frame" in responses[0]["stderr"]
    assert responses[1]["status"] == "ok"


def test_server_exits_on_oversized_declaration():
    stdin = io.BytesIO(struct.pack(">I", MAX_FRAME_BYTES + 1))
    stdout = io.BytesIO()
    code = Server(stdin, stdout).serve()
    assert code == 1
    stdout.seek(0)
    response = read_frame(stdout)
    assert response["status"] == "error"
    assert "cap" in response["stderr"]
