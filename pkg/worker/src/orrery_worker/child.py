"""Cell interpreter child: one process per session, killed on breach.

The first frame carries the CPU budget; every later frame is one cell.
Cells run notebook-style: statements execute, and when the final
statement is a bare expression its repr is printed, except None. The
globals dict persists across cells, so state carries within a session
and a failed cell leaves earlier state intact.

The protocol rides on duplicates of the original stdio descriptors;
fds 0 and 1 are repointed at /dev/null before any user code runs, so
nothing a cell does can corrupt the frame stream.
"""

from __future__ import annotations

import ast
import contextlib
import io
import os
import resource
import sys
import traceback
from math import ceil
from typing import Any

from .frames import FrameError, read_frame, write_frame


def run_cell(source: str, env: dict[str, Any]) -> dict[str, Any]:
    out, err = io.StringIO(), io.StringIO()
    status = "ok"
    try:
        tree = ast.parse(source, mode="exec")
    except SyntaxError:
        return {"status": "error", "stdout": "", "stderr": traceback.format_exc()}
    trailing = None
    if tree.body and isinstance(tree.body[-1], ast.Expr):
        trailing = ast.Expression(tree.body[-1].value)
        ast.copy_location(trailing, tree.body[-1])
        tree.body = tree.body[:-1]
    try:
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            if tree.body:
                exec(compile(tree, "<cell>", "exec"), env)  # noqa: S102 - the job
            if trailing is not None:
                value = eval(compile(trailing, "<cell>", "eval"), env)  # noqa: S307
                if value is not None:
                    print(repr(value))
    except BaseException:  # anything a cell raises is its result, not ours
        status = "error"
        err.write(traceback.format_exc())
    return {"status": status, "stdout": out.getvalue(), "stderr": err.getvalue()}


def _apply_cpu_limit(cpu_seconds: float) -> None:
    soft = max(1, ceil(cpu_seconds))
    _, hard = resource.getrlimit(resource.RLIMIT_CPU)
    new_hard = soft + 1 if hard == resource.RLIM_INFINITY else min(soft + 1, hard)
    resource.setrlimit(resource.RLIMIT_CPU, (min(soft, new_hard), new_hard))


def _claim_stdio() -> tuple[Any, Any]:
    proto_in = os.fdopen(os.dup(0), "rb")
    proto_out = os.fdopen(os.dup(1), "wb")
    devnull = os.open(os.devnull, os.O_RDWR)
    os.dup2(devnull, 0)
    os.dup2(devnull, 1)
    os.close(devnull)
    sys.stdout = open(os.devnull, "w")
    sys.stdin = open(os.devnull, "r")
    return proto_in, proto_out


def main() -> int:
    proto_in, proto_out = _claim_stdio()
    config = read_frame(proto_in)
    if config is None:
        return 1
    _apply_cpu_limit(float(config.get("cpu_seconds", 5.0)))
    write_frame(proto_out, {"ready": True})

    env: dict[str, Any] = {"__name__": "__main__", "__builtins__": __builtins__}
    while True:
        try:
            request = read_frame(proto_in)
        except FrameError:
            return 1
        if request is None:
            return 0
        result = run_cell(str(request.get("source", "")), env)
        result["id"] = request.get("id", "")
        write_frame(proto_out, result)


if __name__ == "__main__":
    raise SystemExit(main())
