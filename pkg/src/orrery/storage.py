"""On-disk layout of a run directory.

Everything a run produces lives under one root: the config snapshot, the
run state, the world-model store, per-cycle records, trajectories with
their notebooks and artifacts, and reports. All writes go through the
canonical JSON helpers so identical runs produce identical bytes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

from .agents import Trajectory, notebook_export
from .canonical import atomic_write_bytes, atomic_write_text, dumps_pretty, read_json, sha256_file
from .errors import CorruptStore, DatasetTooLarge, IoFailure

RUN_FORMAT = "run/1"
CYCLE_FORMAT = "cycle/1"
CONFIG_FORMAT = "run-config/1"
REPORT_FORMAT = "report/1"

DEFAULT_SIZE_CAP_BYTES = 5 * 1024**3


@dataclass(frozen=True)
class RunPaths:
    root: Path

    @property
    def config(self) -> Path:
        return self.root / "config.json"

    @property
    def run_state(self) -> Path:
        return self.root / "run.json"

    @property
    def worldmodel(self) -> Path:
        return self.root / "worldmodel"

    @property
    def cycles(self) -> Path:
        return self.root / "cycles"

    @property
    def trajectories(self) -> Path:
        return self.root / "trajectories"

    @property
    def notebooks(self) -> Path:
        return self.root / "notebooks"

    @property
    def artifacts(self) -> Path:
        return self.root / "artifacts"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    def cycle_file(self, index: int) -> Path:
        return self.cycles / f"cycle-{index:04d}.json"

    def report_file(self, report_id: str) -> Path:
        return self.reports / f"{report_id}.json"


class RunStorage:
    """Reader/writer for one run directory."""

    def __init__(self, root: Path | str) -> None:
        self.paths = RunPaths(Path(root))

    @property
    def root(self) -> Path:
        return self.paths.root

    def ensure_layout(self) -> None:
        try:
            for p in (
                self.root,
                self.paths.worldmodel,
                self.paths.cycles,
                self.paths.trajectories,
                self.paths.notebooks,
                self.paths.artifacts,
                self.paths.reports,
            ):
                p.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(f"cannot create run layout under {self.root}: {exc}") from exc

    # -- config ---------------------------------------------------------------

    def write_config_snapshot(self, raw: bytes) -> None:
        """Store the config exactly as given; the snapshot is the contract."""
        atomic_write_bytes(self.paths.config, raw)

    def read_config(self) -> dict[str, Any]:
        return read_json(self.paths.config)

    # -- run state --------------------------------------------------------------

    def write_run_state(self, state: dict[str, Any]) -> None:
        atomic_write_text(self.paths.run_state, dumps_pretty({"format": RUN_FORMAT, **state}))

    def read_run_state(self) -> dict[str, Any]:
        if not self.paths.run_state.exists():
            raise CorruptStore(f"no run state at {self.paths.run_state}")
        state = read_json(self.paths.run_state)
        if state.get("format") != RUN_FORMAT:
            raise CorruptStore(f"unexpected run format {state.get('format')!r}")
        return state

    # -- cycles -----------------------------------------------------------------

    def write_cycle(self, record: dict[str, Any]) -> None:
        index = record["cycle_index"]
        atomic_write_text(
            self.paths.cycle_file(index), dumps_pretty({"format": CYCLE_FORMAT, **record})
        )

    def read_cycle(self, index: int) -> dict[str, Any]:
        path = self.paths.cycle_file(index)
        if not path.exists():
            raise CorruptStore(f"missing cycle record {path.name}")
        record = read_json(path)
        if record.get("format") != CYCLE_FORMAT:
            raise CorruptStore(f"unexpected cycle format in {path.name}")
        return record

    def iter_cycles(self) -> Iterator[dict[str, Any]]:
        for path in sorted(self.paths.cycles.glob("cycle-*.json")):
            yield read_json(path)

    # -- trajectories and artifacts ----------------------------------------------

    def write_trajectory(self, traj: Trajectory) -> None:
        atomic_write_text(
            self.paths.trajectories / f"{traj.trajectory_id}.json",
            dumps_pretty(traj.to_dict()),
        )
        if traj.kind == "analysis":
            atomic_write_text(
                self.paths.notebooks / f"{traj.trajectory_id}.ipynb",
                dumps_pretty(notebook_export(traj)),
            )
        if traj.artifact_data:
            adir = self.paths.artifacts / traj.trajectory_id
            adir.mkdir(parents=True, exist_ok=True)
            for name, data in sorted(traj.artifact_data.items()):
                atomic_write_bytes(adir / name, data)

    def read_trajectory(self, trajectory_id: str) -> Trajectory:
        path = self.paths.trajectories / f"{trajectory_id}.json"
        if not path.exists():
            raise CorruptStore(f"missing trajectory {trajectory_id}")
        return Trajectory.from_dict(read_json(path))

    def has_trajectory(self, trajectory_id: str) -> bool:
        return (self.paths.trajectories / f"{trajectory_id}.json").exists()

    def artifact_path(self, trajectory_id: str, name: str) -> Path:
        return self.paths.artifacts / trajectory_id / name

    # -- reports --------------------------------------------------------------

    def write_report(self, report: dict[str, Any]) -> None:
        atomic_write_text(
            self.paths.report_file(report["report_id"]),
            dumps_pretty({"format": REPORT_FORMAT, **report}),
        )

    def read_report(self, report_id: str) -> dict[str, Any]:
        path = self.paths.report_file(report_id)
        if not path.exists():
            raise CorruptStore(f"missing report {report_id}")
        report = read_json(path)
        if report.get("format") != REPORT_FORMAT:
            raise CorruptStore(f"unexpected report format in {path.name}")
        return report

    def list_report_ids(self) -> list[str]:
        return sorted(p.stem for p in self.paths.reports.glob("*.json"))


def tree_snapshot(root: Path | str) -> dict[str, str]:
    """Map every file under root (relative path, posix) to its sha256.

    Two run directories are byte-identical exactly when their snapshots
    are equal.
    """
    root = Path(root)
    out: dict[str, str] = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[path.relative_to(root).as_posix()] = sha256_file(path)
    return out


def directory_size(path: Path | str) -> int:
    total = 0
    for dirpath, _dirnames, filenames in os.walk(path):
        for name in filenames:
            fp = os.path.join(dirpath, name)
            try:
                total += os.path.getsize(fp)
            except OSError:
                continue
    return total


def enforce_size_cap(
    dataset_path: Path | str,
    cap_bytes: int = DEFAULT_SIZE_CAP_BYTES,
    override: bool = False,
) -> int:
    """Refuse oversized datasets unless the operator explicitly overrides."""
    size = directory_size(dataset_path)
    if size > cap_bytes and not override:
        raise DatasetTooLarge(
            f"dataset at {dataset_path} is {size} bytes, over the {cap_bytes}-byte cap; "
            "pass the override flag to proceed anyway"
        )
    return size
