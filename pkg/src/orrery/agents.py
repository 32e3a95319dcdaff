"""Single-task agent rollouts and their summaries.

An analysis rollout drives a code-execution session cell by cell; a
literature rollout searches a corpus and reads documents. Both end by
distilling the trajectory into world-model entry drafts whose provenance
edges point at the exact cells or citations that back them. Trajectories
are the durable ground truth reports are later audited against.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from .backends import BackendSuite, SearchHit
from .errors import BackendFailure, MalformedEntry
from .provenance import Citation, ProvenanceEdge
from .worldmodel import EntryDraft, EntryKind

log = logging.getLogger(__name__)

TRAJECTORY_FORMAT = "trajectory/1"

# Deterministic header order keeps prompts (and so scripted replies) stable.
_HEADER_ORDER = (
    "op", "cycle", "task", "step", "kind", "cells", "documents",
    "hits", "entries", "attempt",
)


def render_prompt(headers: dict[str, Any], body: str = "") -> str:
    """Headers in fixed order, then alphabetical stragglers, then the body."""
    keys = [k for k in _HEADER_ORDER if k in headers]
    keys += sorted(k for k in headers if k not in _HEADER_ORDER)
    lines = [f"#{k}: {headers[k]}" for k in keys]
    text = "\n".join(lines) + "\n"
    if body:
        text += "\n" + body
        if not body.endswith("\n"):
            text += "\n"
    return text


def complete_json(
    lm,
    headers: dict[str, Any],
    body: str = "",
    retries: int = 1,
    backoff_base: float = 0.0,
) -> dict[str, Any]:
    """Ask the model for a JSON object, retrying transport and parse errors.

    Backoff is a fixed doubling schedule with no jitter; attempt numbers
    are visible to the model in the ``#attempt`` header so scripted
    backends can fail specific attempts on purpose.
    """
    last: Exception | None = None
    for attempt in range(retries + 1):
        if attempt and backoff_base > 0:
            time.sleep(backoff_base * (2 ** (attempt - 1)))
        prompt = render_prompt({**headers, "attempt": attempt}, body)
        try:
            text = lm.complete(prompt)
            obj = json.loads(text)
            if not isinstance(obj, dict):
                raise ValueError("model response is not a JSON object")
            return obj
        except (BackendFailure, ValueError) as exc:
            last = exc
            log.debug("attempt %d for op %s failed: %s", attempt, headers.get("op"), exc)
    raise BackendFailure(
        f"op {headers.get('op')} failed after {retries + 1} attempts: {last}"
    ) from last


# ---------------------------------------------------------------------------
# trajectory records


@dataclass(frozen=True)
class Cell:
    """One executed notebook cell."""

    index: int
    source: str
    status: str
    stdout: str
    stderr: str
    artifacts: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "source": self.source,
            "status": self.status,
            "stdout": self.stdout,
            "stderr": self.stderr,
            "artifacts": list(self.artifacts),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Cell":
        return cls(
            index=d["index"],
            source=d["source"],
            status=d["status"],
            stdout=d["stdout"],
            stderr=d["stderr"],
            artifacts=tuple(d.get("artifacts", [])),
        )


@dataclass(frozen=True)
class DocumentRecord:
    """A document the literature agent actually read."""

    document_id: str
    title: str
    venue_year: str
    citation: Citation

    def to_dict(self) -> dict[str, Any]:
        return {
            "document_id": self.document_id,
            "title": self.title,
            "venue_year": self.venue_year,
            "citation": self.citation.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DocumentRecord":
        return cls(
            document_id=d["document_id"],
            title=d["title"],
            venue_year=d["venue_year"],
            citation=Citation.from_dict(d["citation"]),
        )


@dataclass(frozen=True)
class LiteratureClaim:
    statement: str
    citation: Citation

    def to_dict(self) -> dict[str, Any]:
        return {"statement": self.statement, "citation": self.citation.to_dict()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "LiteratureClaim":
        return cls(statement=d["statement"], citation=Citation.from_dict(d["citation"]))


@dataclass
class Trajectory:
    """Full record of one rollout; persisted verbatim beside the run."""

    trajectory_id: str
    task_id: str
    kind: str  # analysis | literature
    directive: str
    cycle_index: int
    outcome: str = "completed"  # completed | step_budget
    cells: list[Cell] = field(default_factory=list)
    query: str | None = None
    hits: list[SearchHit] = field(default_factory=list)
    documents_read: list[DocumentRecord] = field(default_factory=list)
    claims: list[LiteratureClaim] = field(default_factory=list)
    # artifact bytes ride along in memory only; names live in cells
    artifact_data: dict[str, bytes] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": TRAJECTORY_FORMAT,
            "trajectory_id": self.trajectory_id,
            "task_id": self.task_id,
            "kind": self.kind,
            "directive": self.directive,
            "cycle_index": self.cycle_index,
            "outcome": self.outcome,
            "cells": [c.to_dict() for c in self.cells],
            "query": self.query,
            "hits": [h.to_dict() for h in self.hits],
            "documents_read": [d.to_dict() for d in self.documents_read],
            "claims": [c.to_dict() for c in self.claims],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Trajectory":
        return cls(
            trajectory_id=d["trajectory_id"],
            task_id=d["task_id"],
            kind=d["kind"],
            directive=d["directive"],
            cycle_index=d["cycle_index"],
            outcome=d["outcome"],
            cells=[Cell.from_dict(c) for c in d.get("cells", [])],
            query=d.get("query"),
            hits=[SearchHit(**h) for h in d.get("hits", [])],
            documents_read=[DocumentRecord.from_dict(x) for x in d.get("documents_read", [])],
            claims=[LiteratureClaim.from_dict(x) for x in d.get("claims", [])],
        )

    def citation_for(self, document_id: str) -> Citation:
        for claim in self.claims:
            if claim.citation.document_id == document_id:
                return claim.citation
        for rec in self.documents_read:
            if rec.document_id == document_id:
                return rec.citation
        raise KeyError(document_id)


@dataclass(frozen=True)
class TaskSummary:
    """What one finished rollout contributes back to the shared state."""

    task_id: str
    trajectory_id: str
    kind: str
    outcome: str
    drafts: tuple[EntryDraft, ...]
    loc: int
    papers_read: tuple[str, ...]
    artifact_names: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "trajectory_id": self.trajectory_id,
            "kind": self.kind,
            "outcome": self.outcome,
            "drafts": [d.to_dict() for d in self.drafts],
            "loc": self.loc,
            "papers_read": list(self.papers_read),
            "artifact_names": list(self.artifact_names),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TaskSummary":
        return cls(
            task_id=d["task_id"],
            trajectory_id=d["trajectory_id"],
            kind=d["kind"],
            outcome=d["outcome"],
            drafts=tuple(EntryDraft.from_dict(x) for x in d.get("drafts", [])),
            loc=d["loc"],
            papers_read=tuple(d.get("papers_read", [])),
            artifact_names=tuple(d.get("artifact_names", [])),
        )


def count_loc(cells: Sequence[Cell]) -> int:
    """Non-blank source lines across all cells."""
    return sum(
        1 for cell in cells for line in cell.source.splitlines() if line.strip()
    )


# ---------------------------------------------------------------------------
# rollouts


@dataclass(frozen=True)
class AgentSettings:
    max_steps: int = 8
    retries: int = 1
    backoff_base: float = 0.0
    search_limit: int = 5
    dataset: str | None = None
    quote_words: int = 12


def _doc_quote(text: str, words: int) -> str:
    return " ".join(text.split()[:words])


def run_analysis_task(
    task_id: str,
    directive: str,
    cycle_index: int,
    suite: BackendSuite,
    settings: AgentSettings | None = None,
) -> Trajectory:
    """Drive one analysis session until the model stops or the step budget ends."""
    cfg = settings or AgentSettings()
    traj = Trajectory(
        trajectory_id=f"t-{task_id}",
        task_id=task_id,
        kind="analysis",
        directive=directive,
        cycle_index=cycle_index,
    )
    suite.executor.start_session(cfg.dataset)
    try:
        stopped = False
        for step in range(cfg.max_steps):
            tail = "".join(
                f"[cell {c.index} {c.status}] {c.stdout or c.stderr}" for c in traj.cells[-2:]
            )
            reply = complete_json(
                suite.lm,
                {
                    "op": "analysis-step",
                    "cycle": cycle_index,
                    "task": task_id,
                    "step": step,
                },
                body=f"{directive}\n{tail}",
                retries=cfg.retries,
                backoff_base=cfg.backoff_base,
            )
            if reply.get("stop"):
                stopped = True
                break
            source = reply.get("cell")
            if not isinstance(source, str) or not source.strip():
                raise BackendFailure(f"analysis step for {task_id} returned no cell")
            result = suite.executor.execute(source)
            names = tuple(sorted(result.artifacts))
            traj.cells.append(
                Cell(
                    index=len(traj.cells),
                    source=source,
                    status=result.status,
                    stdout=result.stdout,
                    stderr=result.stderr,
                    artifacts=names,
                )
            )
            traj.artifact_data.update(result.artifacts)
        traj.outcome = "completed" if stopped else "step_budget"
    finally:
        suite.executor.end_session()
    return traj


def run_literature_task(
    task_id: str,
    directive: str,
    cycle_index: int,
    suite: BackendSuite,
    settings: AgentSettings | None = None,
) -> Trajectory:
    """Query the corpus, read the chosen documents, record citable claims."""
    cfg = settings or AgentSettings()
    traj = Trajectory(
        trajectory_id=f"t-{task_id}",
        task_id=task_id,
        kind="literature",
        directive=directive,
        cycle_index=cycle_index,
    )
    ask = complete_json(
        suite.lm,
        {"op": "literature-step", "cycle": cycle_index, "task": task_id, "step": 0},
        body=directive,
        retries=cfg.retries,
        backoff_base=cfg.backoff_base,
    )
    query = ask.get("query")
    if not isinstance(query, str) or not query.strip():
        raise BackendFailure(f"literature step for {task_id} returned no query")
    traj.query = query
    traj.hits = suite.search.search(query, limit=cfg.search_limit)

    pick = complete_json(
        suite.lm,
        {
            "op": "literature-step",
            "cycle": cycle_index,
            "task": task_id,
            "step": 1,
            "hits": ",".join(h.document_id for h in traj.hits),
        },
        body=directive,
        retries=cfg.retries,
        backoff_base=cfg.backoff_base,
    )
    hit_ids = {h.document_id for h in traj.hits}
    for doc_id in pick.get("read", []):
        if doc_id not in hit_ids:
            raise BackendFailure(f"model chose {doc_id} which was never a hit")
        doc = suite.search.fetch(doc_id)
        traj.documents_read.append(
            DocumentRecord(
                document_id=doc.document_id,
                title=doc.title,
                venue_year=doc.venue_year,
                citation=Citation(
                    document_id=doc.document_id,
                    title=doc.title,
                    venue_year=doc.venue_year,
                    locator="full-text",
                    quote=_doc_quote(doc.text, cfg.quote_words),
                ),
            )
        )
    read_ids = {r.document_id for r in traj.documents_read}
    for raw in pick.get("claims", []):
        doc_id = raw.get("document_id")
        if doc_id not in read_ids:
            continue  # claims must come from documents actually read
        rec = next(r for r in traj.documents_read if r.document_id == doc_id)
        traj.claims.append(
            LiteratureClaim(
                statement=raw.get("statement", ""),
                citation=Citation(
                    document_id=doc_id,
                    title=rec.title,
                    venue_year=rec.venue_year,
                    locator=raw.get("locator", "full-text"),
                    quote=rec.citation.quote,
                ),
            )
        )
    traj.outcome = "completed"
    return traj


def summarize_trajectory(
    traj: Trajectory,
    suite: BackendSuite,
    settings: AgentSettings | None = None,
) -> TaskSummary:
    """Distill a trajectory into entry drafts with exact provenance edges."""
    cfg = settings or AgentSettings()
    headers: dict[str, Any] = {
        "op": "summarize",
        "cycle": traj.cycle_index,
        "task": traj.task_id,
        "kind": traj.kind,
    }
    if traj.kind == "analysis":
        headers["cells"] = len(traj.cells)
        body = "\n".join(f"[{c.index}:{c.status}] {c.source}" for c in traj.cells)
    else:
        headers["documents"] = ",".join(r.document_id for r in traj.documents_read)
        body = "\n".join(c.statement for c in traj.claims)
    reply = complete_json(
        suite.lm, headers, body, retries=cfg.retries, backoff_base=cfg.backoff_base
    )

    drafts: list[EntryDraft] = []
    for raw in reply.get("drafts", []):
        kind = EntryKind(raw.get("kind", "task_note"))
        edges: list[ProvenanceEdge] = []
        for idx in raw.get("cells", []):
            if not 0 <= int(idx) < len(traj.cells):
                raise MalformedEntry(f"draft cites cell {idx} outside trajectory")
            edges.append(ProvenanceEdge.to_cell(traj.trajectory_id, int(idx)))
        for doc_id in raw.get("documents", []):
            try:
                citation = traj.citation_for(doc_id)
            except KeyError:
                raise MalformedEntry(f"draft cites unread document {doc_id}")
            edges.append(ProvenanceEdge.to_citation(traj.trajectory_id, citation))
        drafts.append(
            EntryDraft(
                kind=kind,
                statement=raw.get("statement", ""),
                provenance=edges,
                cycle_index=traj.cycle_index,
            )
        )

    artifact_names = tuple(sorted(traj.artifact_data))
    return TaskSummary(
        task_id=traj.task_id,
        trajectory_id=traj.trajectory_id,
        kind=traj.kind,
        outcome=traj.outcome,
        drafts=tuple(drafts),
        loc=count_loc(traj.cells),
        papers_read=tuple(sorted(read.document_id for read in traj.documents_read)),
        artifact_names=artifact_names,
    )


def run_task(
    task_id: str,
    kind: str,
    directive: str,
    cycle_index: int,
    suite: BackendSuite,
    settings: AgentSettings | None = None,
) -> tuple[Trajectory, TaskSummary]:
    """One full rollout: execute then summarize."""
    runner: Callable[..., Trajectory]
    if kind == "analysis":
        runner = run_analysis_task
    elif kind == "literature":
        runner = run_literature_task
    else:
        raise BackendFailure(f"unknown task kind {kind!r}")
    traj = runner(task_id, directive, cycle_index, suite, settings)
    summary = summarize_trajectory(traj, suite, settings)
    return traj, summary


def notebook_export(traj: Trajectory) -> dict[str, Any]:
    """Render an analysis trajectory as a Jupyter notebook document."""
    cells = []
    for cell in traj.cells:
        outputs: list[dict[str, Any]] = []
        if cell.stdout:
            outputs.append(
                {"output_type": "stream", "name": "stdout", "text": cell.stdout.splitlines(True)}
            )
        if cell.status == "error":
            trace = cell.stderr.splitlines()
            outputs.append(
                {
                    "output_type": "error",
                    "ename": trace[-1].split(":", 1)[0] if trace else "Error",
                    "evalue": trace[-1].split(":", 1)[-1].strip() if trace else "",
                    "traceback": trace,
                }
            )
        cells.append(
            {
                "cell_type": "code",
                "execution_count": cell.index + 1,
                "metadata": {},
                "source": cell.source.splitlines(True),
                "outputs": outputs,
            }
        )
    return {
        "nbformat": 4,
        "nbformat_minor": 5,
        "metadata": {"language_info": {"name": "python"}},
        "cells": cells,
    }
