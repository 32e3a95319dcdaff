"""Rollouts and summaries against the scripted suite."""

from __future__ import annotations

import pytest

from orrery.agents import (
    AgentSettings,
    Cell,
    Trajectory,
    complete_json,
    count_loc,
    notebook_export,
    render_prompt,
    run_analysis_task,
    run_literature_task,
    run_task,
    summarize_trajectory,
)
from orrery.backends import ScriptProfile, build_scripted_suite
from orrery.errors import BackendFailure
from orrery.provenance import EdgeKind
from orrery.worldmodel import EntryKind


def _suite(profile: ScriptProfile | None = None, seed: int = 7):
    return build_scripted_suite(seed, profile or ScriptProfile())


# -- prompt plumbing ----------------------------------------------------------


def test_render_prompt_fixed_order():
    text = render_prompt({"attempt": 1, "op": "plan", "cycle": 2}, "body")
    assert text.splitlines() == ["#op: plan", "#cycle: 2", "#attempt: 1", "", "body"]


def test_complete_json_retries_through_flaky_backend():
    suite = _suite(ScriptProfile(flaky_ops=frozenset({("plan", 4)})))
    obj = complete_json(suite.lm, {"op": "plan", "cycle": 4}, retries=1)
    assert obj["tasks"]


def test_complete_json_exhausts_retries():
    suite = _suite(ScriptProfile(broken_slots=frozenset({(1, 0)})))
    with pytest.raises(BackendFailure):
        complete_json(
            suite.lm,
            {"op": "analysis-step", "cycle": 1, "task": "c001-00", "step": 0},
            retries=2,
        )


# -- analysis rollouts --------------------------------------------------------


def test_analysis_rollout_shape():
    suite = _suite()
    traj = run_analysis_task("c001-02", "Quantify drift", 1, suite)
    assert traj.outcome == "completed"
    assert len(traj.cells) == 3
    assert [c.index for c in traj.cells] == [0, 1, 2]
    assert all(c.status == "ok" for c in traj.cells)
    # The final cell saves one figure named after the task.
    assert traj.cells[-1].artifacts == ("c001-02-s2.svg",)
    assert "c001-02-s2.svg" in traj.artifact_data


def test_analysis_rollout_is_deterministic():
    a = run_analysis_task("c001-02", "Quantify drift", 1, _suite())
    b = run_analysis_task("c001-02", "Quantify drift", 1, _suite())
    assert a.to_dict() == b.to_dict()


def test_analysis_error_cell_does_not_abort():
    suite = _suite(ScriptProfile(error_cell_slots=frozenset({(1, 2)})))
    traj = run_analysis_task("c001-02", "Quantify drift", 1, suite)
    assert traj.outcome == "completed"
    assert traj.cells[1].status == "error"
    assert "fit diverged" in traj.cells[1].stderr
    assert traj.cells[2].status == "ok"


def test_analysis_step_budget():
    suite = _suite(ScriptProfile(step_budget_slots=frozenset({(1, 2)})))
    traj = run_analysis_task("c001-02", "Quantify drift", 1, suite, AgentSettings(max_steps=5))
    assert traj.outcome == "step_budget"
    assert len(traj.cells) == 5


def test_analysis_broken_slot_raises():
    suite = _suite(ScriptProfile(broken_slots=frozenset({(1, 2)})))
    with pytest.raises(BackendFailure):
        run_analysis_task("c001-02", "Quantify drift", 1, suite)


def test_count_loc_oracle():
    cells = [
        Cell(0, "a = 1\n\nb = 2", "ok", "", ""),
        Cell(1, "  \n", "ok", "", ""),
        Cell(2, "c = 3", "ok", "", ""),
    ]
    brute = sum(
        1 for c in cells for line in c.source.splitlines() if line.strip()
    )
    assert count_loc(cells) == brute == 3


# -- literature rollouts ------------------------------------------------------


def test_literature_rollout_reads_and_claims():
    suite = _suite()
    traj = run_literature_task("c001-00", "Survey prior reports", 1, suite)
    assert traj.outcome == "completed"
    assert traj.query
    assert len(traj.hits) == 5
    assert len(traj.documents_read) == 2
    assert len(traj.claims) == 2
    for claim in traj.claims:
        assert claim.citation.quote
        doc = suite.search.fetch(claim.citation.document_id)
        assert claim.citation.quote in doc.text
        assert claim.citation.document_id in {r.document_id for r in traj.documents_read}


def test_literature_rollout_deterministic():
    a = run_literature_task("c001-00", "Survey prior reports", 1, _suite())
    b = run_literature_task("c001-00", "Survey prior reports", 1, _suite())
    assert a.to_dict() == b.to_dict()


# -- summaries ----------------------------------------------------------------


def test_summarize_analysis_builds_cell_edges():
    suite = _suite()
    traj = run_analysis_task("c001-02", "Quantify drift", 1, suite)
    summary = summarize_trajectory(traj, suite)
    assert summary.task_id == "c001-02"
    assert summary.loc == count_loc(traj.cells)
    assert summary.papers_read == ()
    assert len(summary.drafts) == 2
    for draft in summary.drafts:
        assert draft.cycle_index == 1
        if draft.kind in (EntryKind.FINDING, EntryKind.HYPOTHESIS):
            assert draft.provenance
            for edge in draft.provenance:
                assert edge.kind is EdgeKind.NOTEBOOK_CELL
                assert edge.trajectory_id == traj.trajectory_id
                assert 0 <= edge.cell_index < len(traj.cells)


def test_summarize_literature_builds_citation_edges():
    suite = _suite()
    traj = run_literature_task("c001-00", "Survey prior reports", 1, suite)
    summary = summarize_trajectory(traj, suite)
    assert summary.papers_read == tuple(sorted(r.document_id for r in traj.documents_read))
    flagged = [d for d in summary.drafts if d.kind is not EntryKind.OPEN_QUESTION]
    assert flagged
    for draft in flagged:
        assert draft.provenance
        for edge in draft.provenance:
            assert edge.kind is EdgeKind.CITATION
            assert edge.citation is not None
            assert edge.citation.quote


def test_run_task_dispatches_by_kind():
    suite = _suite()
    traj, summary = run_task("c001-00", "literature", "Survey", 1, suite)
    assert traj.kind == "literature" and summary.kind == "literature"
    traj, summary = run_task("c001-05", "analysis", "Quantify", 1, suite)
    assert traj.kind == "analysis" and summary.kind == "analysis"
    with pytest.raises(BackendFailure):
        run_task("c001-05", "interview", "Ask", 1, suite)


# -- notebook export ----------------------------------------------------------


def test_notebook_export_shape():
    suite = _suite(ScriptProfile(error_cell_slots=frozenset({(1, 2)})))
    traj = run_analysis_task("c001-02", "Quantify drift", 1, suite)
    nb = notebook_export(traj)
    assert nb["nbformat"] == 4
    assert len(nb["cells"]) == len(traj.cells)
    err_cell = nb["cells"][1]
    kinds = {o["output_type"] for o in err_cell["outputs"]}
    assert "error" in kinds
    ok_cell = nb["cells"][0]
    assert ok_cell["outputs"][0]["output_type"] == "stream"
    assert ok_cell["execution_count"] == 1


def test_trajectory_roundtrip():
    suite = _suite()
    traj = run_literature_task("c001-00", "Survey prior reports", 1, suite)
    again = Trajectory.from_dict(traj.to_dict())
    assert again.to_dict() == traj.to_dict()
