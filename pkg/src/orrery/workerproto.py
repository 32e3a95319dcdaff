"""Conformance checks any execution worker must pass.

The checks exercise the full contract from the client side: handshake
version, notebook-style execution semantics, state persistence inside a
session, artifact capture, resource-limit enforcement with clean session
replacement afterward, and survival of malformed input. A worker
implementation in any language is acceptable exactly when every check
passes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

from .errors import ProtocolError
from .wire import PROTOCOL_VERSION, WorkerExecutor, WorkerLimits, WorkerProcess


@dataclass(frozen=True)
class ConformanceCheck:
    name: str
    passed: bool
    detail: str = ""


def _check(name: str, condition: bool, detail: str = "") -> ConformanceCheck:
    return ConformanceCheck(name=name, passed=bool(condition), detail=detail)


def run_conformance(command: Sequence[str]) -> list[ConformanceCheck]:
    """Drive one worker binary through the whole contract."""
    checks: list[ConformanceCheck] = []

    # Session 1: handshake, execution semantics, state, artifacts.
    executor = WorkerExecutor(command, WorkerLimits(cpu_seconds=5.0, wall_seconds=10.0))
    try:
        executor.start_session()
        checks.append(_check("handshake", True, f"announced {PROTOCOL_VERSION}"))
    except Exception as exc:
        checks.append(_check("handshake", False, str(exc)))
        return checks

    try:
        r = executor.execute("print('hi')")
        checks.append(
            _check("exec-basic", r.status == "ok" and r.stdout == "hi\n", repr(r.stdout))
        )
        executor.execute("x = 41")
        r = executor.execute("print(x + 1)")
        checks.append(
            _check("state-persists", r.status == "ok" and r.stdout == "42\n", repr(r.stdout))
        )
        r = executor.execute("1 + 2")
        checks.append(
            _check(
                "expression-value", r.status == "ok" and r.stdout.strip() == "3", repr(r.stdout)
            )
        )
        r = executor.execute("1 / 0")
        error_ok = r.status == "error" and "ZeroDivisionError" in r.stderr
        r2 = executor.execute("print(x)")
        checks.append(
            _check(
                "error-isolated",
                error_ok and r2.status == "ok" and r2.stdout == "41\n",
                f"error={r.status} after={r2.stdout!r}",
            )
        )
        r = executor.execute("with open('fig.svg', 'w') as f: f.write('<svg/>')")
        checks.append(
            _check(
                "artifacts",
                r.status == "ok" and r.artifacts.get("fig.svg") == b"<svg/>",
                str(sorted(r.artifacts)),
            )
        )
    finally:
        executor.end_session()

    # Session 2: a tight CPU cap must convert a hot loop into a timeout
    # quickly, and the next session must come up clean.
    executor = WorkerExecutor(command, WorkerLimits(cpu_seconds=1.0, wall_seconds=8.0))
    try:
        executor.start_session()
        t0 = time.monotonic()
        r = executor.execute("while True:\n    pass")
        elapsed = time.monotonic() - t0
        checks.append(
            _check(
                "cpu-limit",
                r.status == "timeout" and elapsed < 2.0,
                f"status={r.status} elapsed={elapsed:.2f}s",
            )
        )
    finally:
        executor.end_session()

    # Session 3: a sleeping cell burns no CPU; the wall watchdog must fire.
    executor = WorkerExecutor(command, WorkerLimits(cpu_seconds=5.0, wall_seconds=1.0))
    try:
        executor.start_session()
        t0 = time.monotonic()
        r = executor.execute("import time\ntime.sleep(60)")
        elapsed = time.monotonic() - t0
        checks.append(
            _check(
                "wall-limit",
                r.status == "timeout" and elapsed < 2.0,
                f"status={r.status} elapsed={elapsed:.2f}s",
            )
        )
    finally:
        executor.end_session()

    # Session 4: after a breach the worker still accepts a clean session.
    executor = WorkerExecutor(command, WorkerLimits(cpu_seconds=5.0, wall_seconds=10.0))
    try:
        executor.start_session()
        r = executor.execute("print('clean')")
        checks.append(
            _check("clean-after-breach", r.status == "ok" and r.stdout == "clean\n", r.stdout)
        )
    finally:
        executor.end_session()

    # Raw-frame behavior: malformed JSON must produce an error response,
    # not kill the worker; unknown ops must be refused.
    worker = WorkerProcess(command)
    try:
        response = worker.send_raw(b"this is not json")
        survived = worker.alive
        malformed_ok = (
            response is not None and response.get("status") == "error" and survived
        )
        checks.append(_check("malformed-frame", malformed_ok, str(response)))
        response = worker.request("dance", {})
        checks.append(
            _check("unknown-op", response["status"] == "error", response.get("stderr", ""))
        )
    except ProtocolError as exc:
        checks.append(_check("malformed-frame", False, str(exc)))
    finally:
        worker.close()

    return checks


def assert_conformance(command: Sequence[str]) -> None:
    """Raise with a readable table when any check fails."""
    checks = run_conformance(command)
    failed = [c for c in checks if not c.passed]
    if failed:
        lines = [f"  {c.name}: {c.detail}" for c in failed]
        raise AssertionError(
            f"{len(failed)} of {len(checks)} worker conformance checks failed:\n"
            + "\n".join(lines)
        )
