"""Run accounting: rollout counts, code volume, reading volume, expert time.

The expert-time estimate converts what the run actually did into the
hours a human would have needed for the same surface area: a fixed
per-paper skim cost plus a fixed per-notebook replication cost, expressed
in working months.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .storage import RunStorage


@dataclass(frozen=True)
class ExpertTimeParams:
    """Conversion rates from artifacts to human effort."""

    minutes_per_paper: float = 15.0
    hours_per_notebook: float = 2.0
    hours_per_month: float = 174.0

    def months(self, papers: int, notebooks: int) -> float:
        hours = papers * (self.minutes_per_paper / 60.0) + notebooks * self.hours_per_notebook
        return hours / self.hours_per_month


@dataclass(frozen=True)
class RunMetrics:
    run_id: str
    cycles_completed: int
    rollouts_total: int
    rollouts_analysis: int
    rollouts_literature: int
    rollouts_failed: int
    cells_total: int
    loc_total: int
    artifacts_total: int
    papers_read_unique: int
    entries_added: int
    reports_total: int
    expert_time_months: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "cycles_completed": self.cycles_completed,
            "rollouts_total": self.rollouts_total,
            "rollouts_analysis": self.rollouts_analysis,
            "rollouts_literature": self.rollouts_literature,
            "rollouts_failed": self.rollouts_failed,
            "cells_total": self.cells_total,
            "loc_total": self.loc_total,
            "artifacts_total": self.artifacts_total,
            "papers_read_unique": self.papers_read_unique,
            "entries_added": self.entries_added,
            "reports_total": self.reports_total,
            "expert_time_months": self.expert_time_months,
        }


def compute_run_metrics(
    storage: RunStorage, params: ExpertTimeParams | None = None
) -> RunMetrics:
    """Recount everything from the committed cycle records.

    Failed rollouts count toward the rollout totals (they consumed a task
    slot) but contribute nothing else. Papers are deduplicated across all
    rollouts of the whole run; one notebook is one completed analysis
    rollout.
    """
    params = params or ExpertTimeParams()
    state = storage.read_run_state()
    analysis = literature = failed = 0
    cells = loc = artifacts = entries = 0
    papers: set[str] = set()
    for record in storage.iter_cycles():
        for summary in record.get("summaries", []):
            if summary["kind"] == "analysis":
                analysis += 1
            else:
                literature += 1
            loc += summary.get("loc", 0)
            artifacts += len(summary.get("artifact_names", []))
            papers.update(summary.get("papers_read", []))
            traj = storage.read_trajectory(summary["trajectory_id"])
            cells += len(traj.cells)
        failed += len(record.get("failures", []))
        entries += len(record.get("entry_ids_added", []))
    return RunMetrics(
        run_id=state["run_id"],
        cycles_completed=state["cycles_completed"],
        rollouts_total=analysis + literature + failed,
        rollouts_analysis=analysis,
        rollouts_literature=literature,
        rollouts_failed=failed,
        cells_total=cells,
        loc_total=loc,
        artifacts_total=artifacts,
        papers_read_unique=len(papers),
        entries_added=entries,
        reports_total=len(state.get("report_ids", [])),
        expert_time_months=params.months(papers=len(papers), notebooks=analysis),
    )
