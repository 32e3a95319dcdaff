"""Cycle engine: config, planning, dispatch isolation, termination, resume."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from orrery.agents import AgentSettings
from orrery.backends import BackendSuite, ScriptProfile, build_scripted_suite
from orrery.engine import (
    DiscoveryRun,
    RunBudget,
    RunConfig,
    Task,
    dispatch_cycle,
    plan_cycle,
    run_id_for,
)
from orrery.errors import (
    AlreadyTerminated,
    BackendFailure,
    ConfigInvalid,
    CorruptStore,
    InvalidBudget,
    MalformedPlan,
    PlanEmpty,
    UnknownCycle,
)
from orrery.storage import RunStorage, tree_snapshot
from orrery.worldmodel import EntryKind, Selector, WorldModelStore


def _config_bytes(**overrides) -> bytes:
    cfg = {
        "format": "run-config/1",
        "objective": "map the scripted domain",
        "seed": 7,
        "budgets": {"cycle_budget": 3, "fanout_limit": 4},
        "backends": {
            "mode": "scripted",
            "profile": {"plan_size": 4, "literature_per_cycle": 1, "cells_per_task": 2},
        },
    }
    cfg.update(overrides)
    return json.dumps(cfg, indent=2).encode()


class _StubLM:
    def __init__(self, text: str) -> None:
        self.text = text

    def complete(self, prompt: str) -> str:
        return self.text


def _stub_suite(text: str) -> BackendSuite:
    suite = build_scripted_suite(1)
    suite.lm = _StubLM(text)
    return suite


# -- config ---------------------------------------------------------------


def test_config_rejects_bad_documents():
    with pytest.raises(ConfigInvalid):
        RunConfig.from_bytes(b"not json")
    with pytest.raises(ConfigInvalid):
        RunConfig.from_bytes(b'["list"]')
    with pytest.raises(ConfigInvalid, match="format"):
        RunConfig.from_bytes(json.dumps({"objective": "x", "seed": 1}).encode())
    with pytest.raises(ConfigInvalid, match="objective"):
        RunConfig.from_bytes(_config_bytes(objective=""))
    with pytest.raises(ConfigInvalid, match="seed"):
        RunConfig.from_bytes(_config_bytes(seed="seven"))
    with pytest.raises(ConfigInvalid, match="budgets"):
        RunConfig.from_bytes(_config_bytes(budgets={"fanout_limit": 0}))
    with pytest.raises(ConfigInvalid, match="checkpoint"):
        RunConfig.from_bytes(_config_bytes(checkpoint_cycles=[0]))
    with pytest.raises(ConfigInvalid, match="mode"):
        RunConfig.from_bytes(_config_bytes(backends={"mode": "psychic"}))


def test_config_rejects_unknown_keys_at_every_level():
    # a typo must fail loudly, not run with silently substituted defaults
    with pytest.raises(ConfigInvalid, match="backend"):
        RunConfig.from_bytes(_config_bytes(backend={"mode": "scripted"}))
    with pytest.raises(ConfigInvalid, match="fanout"):
        RunConfig.from_bytes(_config_bytes(budgets={"fanout": 6}))
    with pytest.raises(ConfigInvalid, match="profle"):
        RunConfig.from_bytes(
            _config_bytes(backends={"mode": "scripted", "profle": {}})
        )
    with pytest.raises(ConfigInvalid, match="plan_szie"):
        RunConfig.from_bytes(
            _config_bytes(backends={"mode": "scripted", "profile": {"plan_szie": 4}})
        )
    with pytest.raises(ConfigInvalid, match="profile"):
        RunConfig.from_bytes(
            _config_bytes(backends={"mode": "scripted", "profile": [1]})
        )


def test_config_checkpoints_sorted_deduped():
    cfg = RunConfig.from_bytes(_config_bytes(checkpoint_cycles=[5, 2, 5]))
    assert cfg.checkpoint_cycles == (2, 5)


def test_budget_validation():
    for bad in (
        {"cycle_budget": 0},
        {"wall_clock_seconds": 0},
        {"fanout_limit": 0},
        {"max_steps": 0},
        {"planner_context_chars": 0},
        {"retries": -1},
        {"backoff_base": -0.1},
    ):
        with pytest.raises(InvalidBudget):
            RunBudget.from_dict(bad)
    assert RunBudget.from_dict({}).fanout_limit == 10


def test_run_id_is_config_derived():
    assert run_id_for(_config_bytes()) == run_id_for(_config_bytes())
    assert run_id_for(_config_bytes()) != run_id_for(_config_bytes(seed=8))
    assert run_id_for(_config_bytes()).startswith("r")


# -- planning ---------------------------------------------------------------


def test_plan_cycle_assigns_task_ids():
    suite = build_scripted_suite(7, ScriptProfile(plan_size=4, literature_per_cycle=1))
    plan = plan_cycle(suite, "objective", 3, WorldModelStore(), RunBudget())
    assert [t.task_id for t in plan.tasks] == ["c003-00", "c003-01", "c003-02", "c003-03"]
    assert plan.tasks[0].kind == "literature"
    assert all(t.kind == "analysis" for t in plan.tasks[1:])
    assert not plan.complete and plan.truncated_from is None


def test_plan_cycle_truncates_to_fanout():
    suite = build_scripted_suite(7, ScriptProfile(overflow_cycles=frozenset({2}), overflow_size=13))
    plan = plan_cycle(suite, "objective", 2, WorldModelStore(), RunBudget(fanout_limit=10))
    assert len(plan.tasks) == 10
    assert plan.truncated_from == 13
    assert any("truncated" in w for w in plan.warnings)


def test_plan_cycle_retries_flaky_and_malformed():
    for knob in ("flaky_ops", "malformed_ops"):
        suite = build_scripted_suite(7, ScriptProfile(**{knob: frozenset({("plan", 1)})}))
        plan = plan_cycle(suite, "objective", 1, WorldModelStore(), RunBudget(retries=1))
        assert plan.tasks


def test_plan_cycle_empty_plan_raises():
    suite = _stub_suite(json.dumps({"tasks": [], "complete": False}))
    with pytest.raises(PlanEmpty):
        plan_cycle(suite, "objective", 1, WorldModelStore(), RunBudget())


def test_plan_cycle_malformed_schema():
    for text in (
        json.dumps({"complete": False}),
        json.dumps({"tasks": [{"kind": "interview", "directive": "x"}]}),
        json.dumps({"tasks": [{"kind": "analysis", "directive": ""}]}),
        json.dumps({"tasks": ["oops"]}),
    ):
        with pytest.raises(MalformedPlan):
            plan_cycle(_stub_suite(text), "objective", 1, WorldModelStore(), RunBudget())


def test_plan_cycle_backend_dead_after_retries():
    class _Dead:
        def complete(self, prompt: str) -> str:
            raise BackendFailure("gone")

    suite = build_scripted_suite(1)
    suite.lm = _Dead()
    with pytest.raises(BackendFailure):
        plan_cycle(suite, "objective", 1, WorldModelStore(), RunBudget(retries=2))


# -- dispatch ---------------------------------------------------------------


def test_dispatch_isolates_single_failure():
    profile = ScriptProfile(plan_size=10, literature_per_cycle=2, broken_slots=frozenset({(1, 4)}))
    suite = build_scripted_suite(7, profile)
    plan = plan_cycle(suite, "objective", 1, WorldModelStore(), RunBudget())
    results, failures = dispatch_cycle(plan.tasks, 1, suite, AgentSettings(), 10)
    assert len(results) == 9
    assert len(failures) == 1
    assert failures[0].task_id == "c001-04"
    assert failures[0].error_kind == "BackendFailure"
    # Results come back in plan order.
    ids = [t.task_id for t, _traj, _s in results]
    assert ids == sorted(ids)


def test_dispatch_results_independent_of_worker_count():
    suite = build_scripted_suite(7, ScriptProfile(plan_size=6, literature_per_cycle=2))
    plan = plan_cycle(suite, "objective", 1, WorldModelStore(), RunBudget())
    wide, wf = dispatch_cycle(plan.tasks, 1, suite, AgentSettings(), 6)
    narrow, nf = dispatch_cycle(plan.tasks, 1, suite, AgentSettings(), 1)
    assert wf == nf == []
    assert [s.to_dict() for _t, _j, s in wide] == [s.to_dict() for _t, _j, s in narrow]


# -- full runs ---------------------------------------------------------------


def test_run_terminates_on_cycle_budget(tmp_path: Path):
    run = DiscoveryRun.new(tmp_path / "run", _config_bytes())
    result = run.run()
    assert result.termination_reason == "cycle_budget"
    assert result.cycles_completed == 3
    assert result.wm_version == 3
    assert any(r.startswith("rep-c0003-f") for r in result.report_ids)


def test_run_objective_complete_runs_final_cycle(tmp_path: Path):
    raw = _config_bytes(
        budgets={"cycle_budget": 10, "fanout_limit": 4},
        backends={
            "mode": "scripted",
            "profile": {"plan_size": 3, "completion_cycle": 2, "cells_per_task": 2},
        },
    )
    result = DiscoveryRun.new(tmp_path / "run", raw).run()
    assert result.termination_reason == "objective_complete"
    assert result.cycles_completed == 2  # the completing cycle still runs


def test_run_objective_complete_empty_plan_skips_cycle(tmp_path: Path):
    raw = _config_bytes(
        budgets={"cycle_budget": 10, "fanout_limit": 4},
        backends={
            "mode": "scripted",
            "profile": {
                "plan_size": 3,
                "completion_cycle": 3,
                "complete_with_empty_plan": True,
                "cells_per_task": 2,
            },
        },
    )
    result = DiscoveryRun.new(tmp_path / "run", raw).run()
    assert result.termination_reason == "objective_complete"
    assert result.cycles_completed == 2  # cycle 3 never materializes
    storage = RunStorage(tmp_path / "run")
    assert not storage.paths.cycle_file(3).exists()


def test_run_wall_clock_stop(tmp_path: Path):
    # The scripted clock advances 1.0 per read; a short wall budget stops early.
    raw = _config_bytes(budgets={"cycle_budget": 50, "wall_clock_seconds": 7, "fanout_limit": 4})
    result = DiscoveryRun.new(tmp_path / "run", raw).run()
    assert result.termination_reason == "wall_clock"
    assert 1 <= result.cycles_completed < 50


def test_run_operator_stop(tmp_path: Path):
    calls = {"n": 0}

    def stop() -> bool:
        calls["n"] += 1
        return calls["n"] > 2  # allow two cycles, stop before the third

    result = DiscoveryRun.new(tmp_path / "run", _config_bytes()).run(operator_stop=stop)
    assert result.termination_reason == "operator_stop"
    assert result.cycles_completed == 2


def test_failed_task_becomes_note_and_cycle_commits(tmp_path: Path):
    raw = _config_bytes(
        budgets={"cycle_budget": 1, "fanout_limit": 4},
        backends={
            "mode": "scripted",
            "profile": {"plan_size": 4, "broken_slots": [[1, 2]], "cells_per_task": 2},
        },
    )
    run = DiscoveryRun.new(tmp_path / "run", raw)
    result = run.run()
    assert result.wm_version == 1
    record = RunStorage(tmp_path / "run").read_cycle(1)
    assert len(record["summaries"]) == 3
    assert len(record["failures"]) == 1
    assert record["failures"][0]["task_id"] == "c001-02"
    statuses = {t["task_id"]: t["status"] for t in record["plan"]}
    assert statuses["c001-02"] == "failed"
    notes = run.store.query(
        run.store.latest, Selector(kinds=frozenset({EntryKind.TASK_NOTE}))
    )
    assert any("c001-02 failed" in e.statement for e in notes)


def test_checkpoint_cycles_emit_reports(tmp_path: Path):
    raw = _config_bytes(checkpoint_cycles=[2])
    result = DiscoveryRun.new(tmp_path / "run", raw).run()
    assert "rep-c0002-k1" in result.report_ids
    report = RunStorage(tmp_path / "run").read_report("rep-c0002-k1")
    assert report["kind"] == "checkpoint"
    assert report["wm_version"] == 2
    assert report["validated"] is True


def test_identical_configs_yield_identical_trees(tmp_path: Path):
    DiscoveryRun.new(tmp_path / "a", _config_bytes()).run()
    DiscoveryRun.new(tmp_path / "b", _config_bytes()).run()
    assert tree_snapshot(tmp_path / "a") == tree_snapshot(tmp_path / "b")


# -- stop/resume ---------------------------------------------------------------


def test_stop_after_cycle_leaves_run_open(tmp_path: Path):
    run = DiscoveryRun.new(tmp_path / "run", _config_bytes())
    result = run.run(stop_after_cycle=1)
    assert result.termination_reason is None
    state = RunStorage(tmp_path / "run").read_run_state()
    assert state["terminated"] is False
    assert state["cycles_completed"] == 1


def test_resume_completes_like_uninterrupted(tmp_path: Path):
    DiscoveryRun.new(tmp_path / "golden", _config_bytes()).run()
    run = DiscoveryRun.new(tmp_path / "killed", _config_bytes())
    run.run(stop_after_cycle=2)
    resumed = DiscoveryRun.resume(tmp_path / "killed")
    result = resumed.run()
    assert result.termination_reason == "cycle_budget"
    assert tree_snapshot(tmp_path / "golden") == tree_snapshot(tmp_path / "killed")


def test_resume_rejects_terminated_run(tmp_path: Path):
    DiscoveryRun.new(tmp_path / "run", _config_bytes()).run()
    with pytest.raises(AlreadyTerminated):
        DiscoveryRun.resume(tmp_path / "run")


def test_resume_detects_state_mismatch(tmp_path: Path):
    run = DiscoveryRun.new(tmp_path / "run", _config_bytes())
    run.run(stop_after_cycle=1)
    state_path = tmp_path / "run" / "run.json"
    state = json.loads(state_path.read_text())
    state["cycles_completed"] = 2
    state_path.write_text(json.dumps(state))
    with pytest.raises(CorruptStore):
        DiscoveryRun.resume(tmp_path / "run")


def test_checkpoint_report_post_hoc_uses_that_version(tmp_path: Path):
    run = DiscoveryRun.new(tmp_path / "run", _config_bytes())
    run.run(stop_after_cycle=2)
    report = run.checkpoint_report(1)
    assert report.wm_version == 1
    assert report.kind == "checkpoint"
    with pytest.raises(UnknownCycle):
        run.checkpoint_report(9)
