"""One execution session: a child interpreter plus its scratch directory.

The wall clock is enforced here, per cell: the child gets until the
deadline to answer, then dies. The CPU budget is enforced inside the
child by rlimit and is cumulative for the session; a breach kills the
child mid-cell and surfaces as a timeout, since from the caller's side
both mean "the cell ran out of compute". Any other child death is
reported as killed. Files that appear or change under the scratch
directory during a cell come back as that cell's artifacts.
"""

from __future__ import annotations

import base64
import os
import shutil
import signal
import subprocess
import sys
import tempfile
import time
from typing import Any

from .frames import FrameError, read_frame_deadline, write_frame

_START_DEADLINE_SECONDS = 30.0


def _scan(root: str) -> dict[str, tuple[int, int]]:
    seen: dict[str, tuple[int, int]] = {}
    for dirpath, _dirnames, filenames in os.walk(root, followlinks=False):
        for name in filenames:
            path = os.path.join(dirpath, name)
            if os.path.islink(path):
                continue
            st = os.stat(path)
            seen[os.path.relpath(path, root)] = (st.st_mtime_ns, st.st_size)
    return seen


class SessionError(Exception):
    pass


class Session:
    def __init__(
        self,
        cpu_seconds: float = 5.0,
        wall_seconds: float = 10.0,
        dataset: str | None = None,
    ) -> None:
        self.wall_seconds = wall_seconds
        self.workdir = tempfile.mkdtemp(prefix="orrery-cell-")
        if dataset:
            os.symlink(os.path.abspath(dataset), os.path.join(self.workdir, "dataset"))
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "orrery_worker.child"],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            cwd=self.workdir,
        )
        self.broken = False
        try:
            write_frame(self.proc.stdin, {"cpu_seconds": cpu_seconds})
            kind, message = read_frame_deadline(
                self.proc.stdout.fileno(), time.monotonic() + _START_DEADLINE_SECONDS
            )
        except (FrameError, OSError) as exc:
            self.close()
            raise SessionError(f"cell interpreter failed to start: {exc}") from exc
        if kind != "frame" or not (message or {}).get("ready"):
            self.close()
            raise SessionError(f"cell interpreter failed to start ({kind})")
        self._known = _scan(self.workdir)
        self._next_cell = 0

    def _collect_artifacts(self) -> dict[str, str]:
        current = _scan(self.workdir)
        fresh = {
            rel: stamp for rel, stamp in current.items() if self._known.get(rel) != stamp
        }
        self._known = current
        artifacts: dict[str, str] = {}
        for rel in sorted(fresh):
            try:
                with open(os.path.join(self.workdir, rel), "rb") as fh:
                    artifacts[rel] = base64.b64encode(fh.read()).decode("ascii")
            except OSError:
                continue  # vanished between scan and read; not worth failing the cell
        return artifacts

    def _reap(self) -> str:
        """The child is gone; decide what its death means."""
        self.broken = True
        code = self.proc.wait()
        if code < 0 and -code == signal.SIGXCPU:
            return "timeout"
        return "killed"

    def _kill(self) -> None:
        self.broken = True
        if self.proc.poll() is None:
            self.proc.kill()
        self.proc.wait()

    def execute(self, source: str) -> dict[str, Any]:
        started = time.monotonic()
        deadline = started + self.wall_seconds

        def finish(status: str, stdout: str = "", stderr: str = "") -> dict[str, Any]:
            artifacts = self._collect_artifacts()
            return {
                "status": status,
                "stdout": stdout,
                "stderr": stderr,
                # a breached or dead cell keeps nothing: its files are suspect
                "artifacts": artifacts if status in ("ok", "error") else {},
                "duration": time.monotonic() - started,
            }

        if self.broken or self.proc.poll() is not None:
            return finish("killed", stderr="session interpreter is gone")
        self._next_cell += 1
        try:
            write_frame(self.proc.stdin, {"id": f"cell-{self._next_cell}", "source": source})
        except (BrokenPipeError, OSError):
            return finish(self._reap(), stderr="cell interpreter died before the cell ran")

        kind, message = read_frame_deadline(self.proc.stdout.fileno(), deadline)
        if kind == "timeout":
            self._kill()
            return finish(
                "timeout", stderr=f"cell exceeded the {self.wall_seconds:g}s wall limit"
            )
        if kind == "eof":
            status = self._reap()
            detail = (
                "cell exceeded the session cpu limit"
                if status == "timeout"
                else "cell interpreter died mid-cell"
            )
            return finish(status, stderr=detail)
        assert message is not None
        return finish(
            str(message.get("status", "error")),
            stdout=str(message.get("stdout", "")),
            stderr=str(message.get("stderr", "")),
        )

    def close(self) -> None:
        try:
            if self.proc.poll() is None:
                if self.proc.stdin:
                    self.proc.stdin.close()
                try:
                    self.proc.wait(timeout=2.0)
                except subprocess.TimeoutExpired:
                    self.proc.kill()
                    self.proc.wait()
        except OSError:
            pass
        shutil.rmtree(self.workdir, ignore_errors=True)
