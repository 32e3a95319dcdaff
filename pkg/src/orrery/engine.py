"""The discovery loop: plan, fan out, commit, repeat until a stop fires.

Each cycle asks the planner for tasks, runs them concurrently against the
backends, and commits exactly one new world-model version from their
summaries, so version k always reflects cycle k. A failed rollout never
sinks its cycle: it is recorded as a failure and as a task note, and the
other rollouts commit normally. All durable state is flushed at each
cycle boundary, which is what makes kill/resume exact.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Sequence

from .agents import AgentSettings, TaskSummary, Trajectory, complete_json, run_task
from .backends import (
    BackendSuite,
    ScriptedClock,
    ScriptProfile,
    SystemClock,
    build_scripted_suite,
)
from .canonical import sha256_bytes
from .errors import (
    AlreadyTerminated,
    ConfigInvalid,
    CorruptStore,
    InvalidBudget,
    MalformedPlan,
    PlanEmpty,
    UnknownCycle,
)
from .report import DiscoveryReport, mark_validated, synthesize_reports, validate_report
from .storage import RunStorage
from .worldmodel import EntryDraft, EntryKind, WorldModelStore, WorldModelVersion

log = logging.getLogger(__name__)

CONFIG_FORMAT = "run-config/1"

REASON_OBJECTIVE = "objective_complete"
REASON_CYCLES = "cycle_budget"
REASON_WALL = "wall_clock"
REASON_OPERATOR = "operator_stop"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunBudget:
    """Hard limits for one run; checked before each cycle starts."""

    cycle_budget: int | None = 20
    wall_clock_seconds: float | None = None
    fanout_limit: int = 10
    max_steps: int = 8
    planner_context_chars: int = 4000
    retries: int = 1
    backoff_base: float = 0.0

    def validate(self) -> None:
        if self.cycle_budget is not None and self.cycle_budget < 1:
            raise InvalidBudget(f"cycle_budget must be >= 1, got {self.cycle_budget}")
        if self.wall_clock_seconds is not None and self.wall_clock_seconds <= 0:
            raise InvalidBudget(
                f"wall_clock_seconds must be positive, got {self.wall_clock_seconds}"
            )
        if self.fanout_limit < 1:
            raise InvalidBudget(f"fanout_limit must be >= 1, got {self.fanout_limit}")
        if self.max_steps < 1:
            raise InvalidBudget(f"max_steps must be >= 1, got {self.max_steps}")
        if self.planner_context_chars < 1:
            raise InvalidBudget("planner_context_chars must be positive")
        if self.retries < 0:
            raise InvalidBudget("retries must be >= 0")
        if self.backoff_base < 0:
            raise InvalidBudget("backoff_base must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "cycle_budget": self.cycle_budget,
            "wall_clock_seconds": self.wall_clock_seconds,
            "fanout_limit": self.fanout_limit,
            "max_steps": self.max_steps,
            "planner_context_chars": self.planner_context_chars,
            "retries": self.retries,
            "backoff_base": self.backoff_base,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunBudget":
        base = cls()
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidBudget(f"unknown budget field(s): {', '.join(unknown)}")
        budget = cls(
            cycle_budget=d.get("cycle_budget", base.cycle_budget),
            wall_clock_seconds=d.get("wall_clock_seconds", base.wall_clock_seconds),
            fanout_limit=d.get("fanout_limit", base.fanout_limit),
            max_steps=d.get("max_steps", base.max_steps),
            planner_context_chars=d.get("planner_context_chars", base.planner_context_chars),
            retries=d.get("retries", base.retries),
            backoff_base=d.get("backoff_base", base.backoff_base),
        )
        budget.validate()
        return budget


@dataclass(frozen=True)
class RunConfig:
    objective: str
    seed: int
    budgets: RunBudget
    checkpoint_cycles: tuple[int, ...] = ()
    backends: dict[str, Any] = field(default_factory=dict)
    dataset: dict[str, Any] | None = None

    @classmethod
    def from_bytes(cls, raw: bytes) -> "RunConfig":
        import json

        try:
            doc = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigInvalid("config root must be a JSON object")
        if doc.get("format") != CONFIG_FORMAT:
            raise ConfigInvalid(
                f"config field 'format' must be {CONFIG_FORMAT!r}, got {doc.get('format')!r}"
            )
        known = {
            "format",
            "objective",
            "seed",
            "budgets",
            "checkpoint_cycles",
            "backends",
            "dataset",
        }
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigInvalid(
                f"unknown config field(s): {', '.join(unknown)}; known fields are "
                + ", ".join(sorted(known))
            )
        objective = doc.get("objective")
        if not isinstance(objective, str) or not objective.strip():
            raise ConfigInvalid("config field 'objective' must be a non-empty string")
        seed = doc.get("seed")
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigInvalid("config field 'seed' must be an integer")
        budgets_raw = doc.get("budgets", {})
        if not isinstance(budgets_raw, dict):
            raise ConfigInvalid("config field 'budgets' must be an object")
        try:
            budgets = RunBudget.from_dict(budgets_raw)
        except InvalidBudget as exc:
            raise ConfigInvalid(f"config field 'budgets' is invalid: {exc}") from exc
        checkpoints_raw = doc.get("checkpoint_cycles", [])
        if not isinstance(checkpoints_raw, list) or not all(
            isinstance(c, int) and c >= 1 for c in checkpoints_raw
        ):
            raise ConfigInvalid("config field 'checkpoint_cycles' must be positive integers")
        backends = doc.get("backends", {"mode": "scripted"})
        if not isinstance(backends, dict):
            raise ConfigInvalid("config field 'backends' must be an object")
        mode = backends.get("mode", "scripted")
        if mode not in ("scripted",):
            raise ConfigInvalid(
                f"config field 'backends.mode' must be 'scripted', got {mode!r}; "
                "live backends are wired programmatically"
            )
        unknown = sorted(set(backends) - {"mode", "profile", "corpus_size", "clock"})
        if unknown:
            raise ConfigInvalid(f"unknown backends field(s): {', '.join(unknown)}")
        profile_raw = backends.get("profile", {})
        if not isinstance(profile_raw, dict):
            raise ConfigInvalid("config field 'backends.profile' must be an object")
        try:
            ScriptProfile.from_dict(profile_raw)
        except (ValueError, TypeError) as exc:
            raise ConfigInvalid(f"config field 'backends.profile' is invalid: {exc}") from exc
        dataset = doc.get("dataset")
        if dataset is not None and not isinstance(dataset, dict):
            raise ConfigInvalid("config field 'dataset' must be an object when present")
        return cls(
            objective=objective,
            seed=seed,
            budgets=budgets,
            checkpoint_cycles=tuple(sorted(set(checkpoints_raw))),
            backends=backends,
            dataset=dataset,
        )


def build_suite(config: RunConfig, clock_state: dict[str, Any] | None = None) -> BackendSuite:
    """Backends named by the config; scripted runs get a counter clock."""
    profile = ScriptProfile.from_dict(config.backends.get("profile", {}))
    suite = build_scripted_suite(config.seed, profile)
    corpus_size = config.backends.get("corpus_size")
    if corpus_size is not None:
        from .backends import ScriptedSearch

        suite.search = ScriptedSearch(config.seed, corpus_size=corpus_size)
    if config.backends.get("clock") == "system":
        suite.clock = SystemClock()
    elif clock_state is not None:
        suite.clock = ScriptedClock.restore(clock_state)
    return suite


def run_id_for(raw_config: bytes) -> str:
    return "r" + sha256_bytes(raw_config)[:12]


# ---------------------------------------------------------------------------
# plan and dispatch records


@dataclass(frozen=True)
class Task:
    task_id: str
    kind: str
    directive: str
    rationale: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "kind": self.kind,
            "directive": self.directive,
            "rationale": self.rationale,
        }


@dataclass(frozen=True)
class PlanResult:
    tasks: tuple[Task, ...]
    complete: bool
    truncated_from: int | None = None
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class TaskFailure:
    task_id: str
    error_kind: str
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {"task_id": self.task_id, "error_kind": self.error_kind, "message": self.message}


@dataclass(frozen=True)
class RunResult:
    run_id: str
    termination_reason: str | None
    cycles_completed: int
    wm_version: int
    report_ids: tuple[str, ...]


def plan_cycle(
    suite: BackendSuite,
    objective: str,
    cycle_index: int,
    store: WorldModelStore,
    budgets: RunBudget,
) -> PlanResult:
    """One planner call, validated and truncated to the fanout limit."""
    digest = store.context_digest(store.latest, budgets.planner_context_chars)
    reply = complete_json(
        suite.lm,
        {"op": "plan", "cycle": cycle_index},
        body=f"{digest}\n#objective-text\n{objective}\n",
        retries=budgets.retries,
        backoff_base=budgets.backoff_base,
    )
    raw_tasks = reply.get("tasks")
    if not isinstance(raw_tasks, list):
        raise MalformedPlan(f"planner reply for cycle {cycle_index} has no task list")
    complete = bool(reply.get("complete", False))
    if not raw_tasks and not complete:
        raise PlanEmpty(f"planner proposed no tasks for cycle {cycle_index}")

    warnings: list[str] = []
    truncated_from: int | None = None
    if len(raw_tasks) > budgets.fanout_limit:
        truncated_from = len(raw_tasks)
        warnings.append(
            f"plan proposed {truncated_from} tasks; truncated to fanout limit "
            f"{budgets.fanout_limit}"
        )
        raw_tasks = raw_tasks[: budgets.fanout_limit]

    tasks: list[Task] = []
    for i, raw in enumerate(raw_tasks):
        if not isinstance(raw, dict):
            raise MalformedPlan(f"task {i} in cycle {cycle_index} is not an object")
        kind = raw.get("kind")
        directive = raw.get("directive")
        if kind not in ("analysis", "literature"):
            raise MalformedPlan(f"task {i} has unknown kind {kind!r}")
        if not isinstance(directive, str) or not directive.strip():
            raise MalformedPlan(f"task {i} has no directive")
        tasks.append(
            Task(
                task_id=f"c{cycle_index:03d}-{i:02d}",
                kind=kind,
                directive=directive,
                rationale=str(raw.get("rationale", "")),
            )
        )
    return PlanResult(
        tasks=tuple(tasks),
        complete=complete,
        truncated_from=truncated_from,
        warnings=tuple(warnings),
    )


def dispatch_cycle(
    tasks: Sequence[Task],
    cycle_index: int,
    suite: BackendSuite,
    settings: AgentSettings,
    fanout_limit: int,
) -> tuple[list[tuple[Task, Trajectory, TaskSummary]], list[TaskFailure]]:
    """Run every task concurrently; join all before returning.

    Results come back in plan order regardless of completion order, so
    downstream commits are schedule-independent. One task's exception is
    isolated into a TaskFailure.
    """
    completed: dict[str, tuple[Trajectory, TaskSummary]] = {}
    failures: dict[str, TaskFailure] = {}
    with ThreadPoolExecutor(max_workers=fanout_limit) as pool:
        futures = {
            pool.submit(
                run_task, t.task_id, t.kind, t.directive, cycle_index, suite, settings
            ): t
            for t in tasks
        }
        for future, task in futures.items():
            try:
                traj, summary = future.result()
                completed[task.task_id] = (traj, summary)
            except Exception as exc:
                log.warning("task %s failed: %s", task.task_id, exc)
                failures[task.task_id] = TaskFailure(
                    task_id=task.task_id,
                    error_kind=type(exc).__name__,
                    message=str(exc),
                )
    ordered = [
        (t, *completed[t.task_id]) for t in tasks if t.task_id in completed
    ]
    ordered_failures = [failures[t.task_id] for t in tasks if t.task_id in failures]
    return ordered, ordered_failures


# ---------------------------------------------------------------------------
# the run itself


class DiscoveryRun:
    """Owns one run directory and its in-memory mirrors."""

    def __init__(
        self,
        storage: RunStorage,
        config: RunConfig,
        suite: BackendSuite,
        run_id: str,
        store: WorldModelStore,
        cycles_completed: int = 0,
        started_at: float | None = None,
        objective_met: bool = False,
        report_ids: tuple[str, ...] = (),
    ) -> None:
        self.storage = storage
        self.config = config
        self.suite = suite
        self.run_id = run_id
        self.store = store
        self.cycles_completed = cycles_completed
        self.started_at = started_at if started_at is not None else suite.clock.now()
        self.objective_met = objective_met
        self.report_ids = list(report_ids)
        self.terminated = False
        self.termination_reason: str | None = None

    # -- construction -----------------------------------------------------------

    @classmethod
    def new(
        cls,
        run_dir: Path | str,
        raw_config: bytes,
        suite: BackendSuite | None = None,
    ) -> "DiscoveryRun":
        config = RunConfig.from_bytes(raw_config)
        storage = RunStorage(run_dir)
        storage.ensure_layout()
        storage.write_config_snapshot(raw_config)
        suite = suite or build_suite(config)
        run = cls(
            storage=storage,
            config=config,
            suite=suite,
            run_id=run_id_for(raw_config),
            store=WorldModelStore(),
        )
        run.store.persist(storage.paths.worldmodel)
        run._write_state()
        return run

    @classmethod
    def resume(cls, run_dir: Path | str, suite: BackendSuite | None = None) -> "DiscoveryRun":
        """Reopen an interrupted run at its last committed cycle."""
        storage = RunStorage(run_dir)
        state = storage.read_run_state()
        if state.get("terminated"):
            raise AlreadyTerminated(
                f"run {state.get('run_id')} already terminated "
                f"({state.get('termination_reason')})"
            )
        raw_config = storage.paths.config.read_bytes()
        config = RunConfig.from_bytes(raw_config)
        if run_id_for(raw_config) != state.get("run_id"):
            raise CorruptStore("run state does not match the config snapshot")
        store = WorldModelStore.load(storage.paths.worldmodel)
        cycles_completed = state.get("cycles_completed", 0)
        if store.latest.version != cycles_completed:
            raise CorruptStore(
                f"world model version {store.latest.version} does not match "
                f"{cycles_completed} completed cycles"
            )
        if suite is None:
            suite = build_suite(config, clock_state=state.get("clock"))
        return cls(
            storage=storage,
            config=config,
            suite=suite,
            run_id=state["run_id"],
            store=store,
            cycles_completed=cycles_completed,
            started_at=state["started_at"],
            objective_met=state.get("objective_met", False),
            report_ids=tuple(state.get("report_ids", [])),
        )

    # -- state I/O ---------------------------------------------------------------

    def _clock_state(self) -> dict[str, Any] | None:
        clock = self.suite.clock
        return clock.state() if isinstance(clock, ScriptedClock) else None

    def _write_state(self, ended_at: float | None = None) -> None:
        self.storage.write_run_state(
            {
                "run_id": self.run_id,
                "objective": self.config.objective,
                "seed": self.config.seed,
                "started_at": self.started_at,
                "ended_at": ended_at,
                "clock": self._clock_state(),
                "cycles_completed": self.cycles_completed,
                "wm_version": self.store.latest.version,
                "objective_met": self.objective_met,
                "terminated": self.terminated,
                "termination_reason": self.termination_reason,
                "report_ids": sorted(self.report_ids),
            }
        )

    # -- termination --------------------------------------------------------------

    def _pending_stop(self, operator_stop: Callable[[], bool] | None) -> str | None:
        """Stop checks in priority order; runs before every cycle."""
        if operator_stop is not None and operator_stop():
            return REASON_OPERATOR
        b = self.config.budgets
        if b.wall_clock_seconds is not None:
            if self.suite.clock.now() - self.started_at >= b.wall_clock_seconds:
                return REASON_WALL
        if b.cycle_budget is not None and self.cycles_completed >= b.cycle_budget:
            return REASON_CYCLES
        if self.objective_met:
            return REASON_OBJECTIVE
        return None

    # -- cycle machinery ------------------------------------------------------------

    def _agent_settings(self) -> AgentSettings:
        b = self.config.budgets
        dataset = (self.config.dataset or {}).get("path")
        return AgentSettings(
            max_steps=b.max_steps,
            retries=b.retries,
            backoff_base=b.backoff_base,
            dataset=dataset,
        )

    def _artifact_map(self) -> dict[str, list[str]]:
        """trajectory id -> artifact names, rebuilt from committed cycles."""
        out: dict[str, list[str]] = {}
        for record in self.storage.iter_cycles():
            for summary in record.get("summaries", []):
                names = summary.get("artifact_names", [])
                if names:
                    out[summary["trajectory_id"]] = list(names)
        return out

    def _synthesize(
        self, kind: str, cycle_index: int, version: "WorldModelVersion | None" = None
    ) -> list[DiscoveryReport]:
        b = self.config.budgets
        reports = synthesize_reports(
            self.store,
            version if version is not None else self.store.latest,
            self.suite,
            kind=kind,
            cycle_index=cycle_index,
            artifact_names=self._artifact_map(),
            retries=b.retries,
            backoff_base=b.backoff_base,
        )
        validated = []
        for report in reports:
            result = validate_report(
                report,
                self.store,
                artifact_exists=lambda tid, name: self.storage.artifact_path(tid, name).exists(),
            )
            validated.append(mark_validated(report, result))
        return validated

    def _run_one_cycle(self, cycle_index: int) -> bool:
        """Plan, dispatch, commit. Returns the planner's completion signal."""
        started_at = self.suite.clock.now()
        plan = plan_cycle(
            self.suite, self.config.objective, cycle_index, self.store, self.config.budgets
        )
        if plan.complete and not plan.tasks:
            # Nothing left to do: terminate without an empty cycle.
            self.objective_met = True
            return True

        results, failures = dispatch_cycle(
            plan.tasks,
            cycle_index,
            self.suite,
            self._agent_settings(),
            self.config.budgets.fanout_limit,
        )

        drafts: list[EntryDraft] = []
        for _task, _traj, summary in results:
            drafts.extend(summary.drafts)
        for failure in failures:
            drafts.append(
                EntryDraft(
                    kind=EntryKind.TASK_NOTE,
                    statement=(
                        f"task {failure.task_id} failed with {failure.error_kind}: "
                        f"{failure.message}"
                    )[:400],
                    provenance=[],
                    cycle_index=cycle_index,
                )
            )
        if not drafts:
            drafts.append(
                EntryDraft(
                    kind=EntryKind.TASK_NOTE,
                    statement=f"cycle {cycle_index} produced no durable entries",
                    provenance=[],
                    cycle_index=cycle_index,
                )
            )

        before = self.store.latest
        version = self.store.insert_entries(before, drafts)
        assert version.version == cycle_index, "version/cycle lockstep broken"

        for _task, traj, _summary in results:
            self.storage.write_trajectory(traj)
        ended_at = self.suite.clock.now()
        status_by_id = {f.task_id: "failed" for f in failures}
        self.storage.write_cycle(
            {
                "cycle_index": cycle_index,
                "started_at": started_at,
                "ended_at": ended_at,
                "plan": [
                    {**t.to_dict(), "status": status_by_id.get(t.task_id, "completed")}
                    for t in plan.tasks
                ],
                "truncated_from": plan.truncated_from,
                "warnings": list(plan.warnings),
                "complete_signal": plan.complete,
                "summaries": [s.to_dict() for _t, _j, s in results],
                "failures": [f.to_dict() for f in failures],
                "wm_version_after": version.version,
                "entry_ids_added": sorted(version.entry_ids - before.entry_ids),
            }
        )
        self.store.persist(self.storage.paths.worldmodel)
        self.cycles_completed = cycle_index

        if cycle_index in self.config.checkpoint_cycles:
            for report in self._synthesize("checkpoint", cycle_index):
                self.storage.write_report(report.to_dict())
                self.report_ids.append(report.report_id)

        self._write_state()
        return plan.complete

    # -- public entry points ----------------------------------------------------------

    def run(
        self,
        stop_after_cycle: int | None = None,
        operator_stop: Callable[[], bool] | None = None,
    ) -> RunResult:
        """Loop until a stop condition fires, then synthesize final reports.

        ``stop_after_cycle`` returns after that cycle commits without
        terminating the run, exactly like a crash at the cycle boundary;
        ``resume`` picks such a run up transparently.
        """
        if self.terminated:
            raise AlreadyTerminated(f"run {self.run_id} already terminated")
        while True:
            reason = self._pending_stop(operator_stop)
            if reason is not None:
                return self._terminate(reason)
            cycle_index = self.cycles_completed + 1
            complete = self._run_one_cycle(cycle_index)
            if complete:
                self.objective_met = True
                self._write_state()
            if stop_after_cycle is not None and self.cycles_completed >= stop_after_cycle:
                return RunResult(
                    run_id=self.run_id,
                    termination_reason=None,
                    cycles_completed=self.cycles_completed,
                    wm_version=self.store.latest.version,
                    report_ids=tuple(sorted(self.report_ids)),
                )

    def _terminate(self, reason: str) -> RunResult:
        if self.cycles_completed > 0:
            for report in self._synthesize("final", self.cycles_completed):
                self.storage.write_report(report.to_dict())
                self.report_ids.append(report.report_id)
        self.terminated = True
        self.termination_reason = reason
        ended_at = self.suite.clock.now()
        self._write_state(ended_at=ended_at)
        return RunResult(
            run_id=self.run_id,
            termination_reason=reason,
            cycles_completed=self.cycles_completed,
            wm_version=self.store.latest.version,
            report_ids=tuple(sorted(self.report_ids)),
        )

    def checkpoint_report(self, cycle_index: int | None = None) -> DiscoveryReport:
        """One validated checkpoint report over the current world model."""
        at = cycle_index if cycle_index is not None else self.cycles_completed
        if at < 0 or at > self.cycles_completed:
            raise UnknownCycle(f"cycle {at} has not completed")
        (report,) = self._synthesize("checkpoint", at, version=self.store.version(at))
        self.storage.write_report(report.to_dict())
        if report.report_id not in self.report_ids:
            self.report_ids.append(report.report_id)
        self._write_state()
        return report
