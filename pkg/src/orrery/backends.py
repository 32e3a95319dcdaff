"""Backend seams: language model, literature search, code executor, clock.

Production deployments plug real services into these protocols. The
scripted implementations below are pure functions of a profile, a seed,
and the request content, so whole multi-cycle runs replay byte for byte.
They are not mocks bolted onto tests; they are the reference backends the
test suite and the golden runs are built on.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import threading
import time
from dataclasses import dataclass, field, fields
from typing import Any, Protocol, runtime_checkable

from .errors import BackendFailure, ExecutorUnavailable, SearchUnavailable

# ---------------------------------------------------------------------------
# protocols and shared value types


@runtime_checkable
class LanguageModel(Protocol):
    def complete(self, prompt: str) -> str:
        """Return the model's text for a prompt; raise BackendFailure on error."""
        ...


@dataclass(frozen=True)
class SearchHit:
    document_id: str
    title: str
    venue_year: str
    score: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "document_id": self.document_id,
            "title": self.title,
            "venue_year": self.venue_year,
            "score": self.score,
        }


@dataclass(frozen=True)
class DocumentText:
    document_id: str
    title: str
    venue_year: str
    text: str


@runtime_checkable
class SearchBackend(Protocol):
    def search(self, query: str, limit: int = 5) -> list[SearchHit]: ...

    def fetch(self, document_id: str) -> DocumentText: ...


@dataclass(frozen=True)
class ExecutionResult:
    """Outcome of one executed cell."""

    status: str  # ok | error | timeout | killed
    stdout: str
    stderr: str
    artifacts: dict[str, bytes] = field(default_factory=dict)
    duration: float = 0.0


@runtime_checkable
class ExecutorBackend(Protocol):
    def start_session(self, dataset: str | None = None) -> str: ...

    def execute(self, source: str) -> ExecutionResult: ...

    def end_session(self) -> None: ...


@runtime_checkable
class Clock(Protocol):
    def now(self) -> float: ...


class SystemClock:
    """Wall time; the default outside tests."""

    def now(self) -> float:
        return time.time()


class ScriptedClock:
    """Counter clock: each read advances by a fixed step.

    Its counter is persisted with the run so a resumed process observes
    the same sequence of timestamps the original would have.
    """

    def __init__(self, start: float = 0.0, step: float = 1.0) -> None:
        self.start = start
        self.step = step
        self.counter = 0

    def now(self) -> float:
        value = self.start + self.step * self.counter
        self.counter += 1
        return value

    def state(self) -> dict[str, Any]:
        return {"start": self.start, "step": self.step, "counter": self.counter}

    @classmethod
    def restore(cls, state: dict[str, Any]) -> "ScriptedClock":
        clock = cls(start=state["start"], step=state["step"])
        clock.counter = state["counter"]
        return clock


@dataclass
class BackendSuite:
    """The four seams an engine run needs, bundled."""

    lm: LanguageModel
    search: SearchBackend
    executor: ExecutorBackend
    clock: Clock


# ---------------------------------------------------------------------------
# deterministic generation helpers

_ADJECTIVES = (
    "elevated", "suppressed", "bimodal", "oscillatory", "saturating",
    "transient", "persistent", "anomalous", "graded", "clustered",
)
_SUBJECTS = (
    "membrane flux", "signal variance", "growth rate", "binding affinity",
    "expression level", "phase coupling", "drift velocity", "error rate",
    "coverage depth", "response latency",
)
_VERBS = (
    "tracks", "lags", "predicts", "inverts with", "scales with",
    "decouples from", "precedes", "dampens", "amplifies", "mirrors",
)
_CONTEXTS = (
    "cold shock", "sparse sampling", "high salinity", "low coverage",
    "rapid cycling", "dense seeding", "long exposure", "mixed batches",
    "shallow gradients", "late passage",
)


def request_rng(seed: int, material: str) -> random.Random:
    """Fresh RNG keyed by the run seed and the request content."""
    digest = hashlib.sha256(f"{seed}\n{material}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _sentence(rng: random.Random) -> str:
    return (
        f"{rng.choice(_ADJECTIVES)} {rng.choice(_SUBJECTS)} "
        f"{rng.choice(_VERBS)} {rng.choice(_SUBJECTS)} under {rng.choice(_CONTEXTS)}"
    )


def parse_headers(prompt: str) -> dict[str, str]:
    """Collect leading ``#key: value`` directives; first occurrence wins."""
    headers: dict[str, str] = {}
    for line in prompt.splitlines():
        m = re.match(r"#([a-z_]+):\s*(.*)$", line)
        if m and m.group(1) not in headers:
            headers[m.group(1)] = m.group(2).strip()
    return headers


# ---------------------------------------------------------------------------
# scripted language model


@dataclass(frozen=True)
class ScriptProfile:
    """Knobs shaping what the scripted model proposes, cycle by cycle.

    Slot sets use ``(cycle, task_index)`` pairs; op sets use
    ``(op, cycle)`` pairs. All fields have golden-run defaults.
    """

    plan_size: int = 10
    plan_overrides: dict[int, int] = field(default_factory=dict)
    literature_per_cycle: int = 2
    overflow_cycles: frozenset[int] = frozenset()
    overflow_size: int = 13
    completion_cycle: int | None = None
    complete_with_empty_plan: bool = False
    cells_per_task: int = 3
    reads_per_task: int = 2
    claims_per_read: int = 1
    drafts_per_task: int = 2
    error_cell_slots: frozenset[tuple[int, int]] = frozenset()
    step_budget_slots: frozenset[tuple[int, int]] = frozenset()
    broken_slots: frozenset[tuple[int, int]] = frozenset()
    flaky_ops: frozenset[tuple[str, int]] = frozenset()
    malformed_ops: frozenset[tuple[str, int]] = frozenset()
    final_reports: int = 3
    narratives_per_report: int = 3
    claims_per_narrative: int = 3
    inject_unlinked_claim: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "plan_size": self.plan_size,
            "plan_overrides": {str(k): v for k, v in sorted(self.plan_overrides.items())},
            "literature_per_cycle": self.literature_per_cycle,
            "overflow_cycles": sorted(self.overflow_cycles),
            "overflow_size": self.overflow_size,
            "completion_cycle": self.completion_cycle,
            "complete_with_empty_plan": self.complete_with_empty_plan,
            "cells_per_task": self.cells_per_task,
            "reads_per_task": self.reads_per_task,
            "claims_per_read": self.claims_per_read,
            "drafts_per_task": self.drafts_per_task,
            "error_cell_slots": sorted(list(p) for p in self.error_cell_slots),
            "step_budget_slots": sorted(list(p) for p in self.step_budget_slots),
            "broken_slots": sorted(list(p) for p in self.broken_slots),
            "flaky_ops": sorted(list(p) for p in self.flaky_ops),
            "malformed_ops": sorted(list(p) for p in self.malformed_ops),
            "final_reports": self.final_reports,
            "narratives_per_report": self.narratives_per_report,
            "claims_per_narrative": self.claims_per_narrative,
            "inject_unlinked_claim": self.inject_unlinked_claim,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScriptProfile":
        def pairset(key: str) -> frozenset[tuple[Any, ...]]:
            return frozenset(tuple(p) for p in d.get(key, []))

        unknown = sorted(set(d) - {f.name for f in fields(cls)})
        if unknown:
            raise ValueError(f"unknown script profile field(s): {', '.join(unknown)}")
        base = cls()
        return cls(
            plan_size=d.get("plan_size", base.plan_size),
            plan_overrides={int(k): v for k, v in d.get("plan_overrides", {}).items()},
            literature_per_cycle=d.get("literature_per_cycle", base.literature_per_cycle),
            overflow_cycles=frozenset(d.get("overflow_cycles", [])),
            overflow_size=d.get("overflow_size", base.overflow_size),
            completion_cycle=d.get("completion_cycle"),
            complete_with_empty_plan=d.get("complete_with_empty_plan", False),
            cells_per_task=d.get("cells_per_task", base.cells_per_task),
            reads_per_task=d.get("reads_per_task", base.reads_per_task),
            claims_per_read=d.get("claims_per_read", base.claims_per_read),
            drafts_per_task=d.get("drafts_per_task", base.drafts_per_task),
            error_cell_slots=pairset("error_cell_slots"),
            step_budget_slots=pairset("step_budget_slots"),
            broken_slots=pairset("broken_slots"),
            flaky_ops=pairset("flaky_ops"),
            malformed_ops=pairset("malformed_ops"),
            final_reports=d.get("final_reports", base.final_reports),
            narratives_per_report=d.get("narratives_per_report", base.narratives_per_report),
            claims_per_narrative=d.get("claims_per_narrative", base.claims_per_narrative),
            inject_unlinked_claim=d.get("inject_unlinked_claim", False),
        )


class ScriptedLanguageModel:
    """Generates plan/step/summary/synthesis JSON from the profile alone.

    Every response is a pure function of (profile, seed, prompt), so
    concurrent calls are safe and replays are exact. Prompts carry their
    routing information in ``#key: value`` header lines.
    """

    def __init__(self, profile: ScriptProfile, seed: int) -> None:
        self.profile = profile
        self.seed = seed

    def complete(self, prompt: str) -> str:
        h = parse_headers(prompt)
        op = h.get("op")
        if op is None:
            raise BackendFailure("prompt carries no #op header")
        cycle = int(h.get("cycle", "0"))
        attempt = int(h.get("attempt", "0"))
        if (op, cycle) in self.profile.flaky_ops and attempt == 0:
            raise BackendFailure(f"scripted transient failure for {op} at cycle {cycle}")
        if (op, cycle) in self.profile.malformed_ops and attempt == 0:
            return "<<not json at all>>"
        rng = request_rng(self.seed, prompt)
        if op == "plan":
            return self._plan(cycle, rng)
        if op == "analysis-step":
            return self._analysis_step(h, cycle, rng)
        if op == "literature-step":
            return self._literature_step(h, rng)
        if op == "summarize":
            return self._summarize(h, rng)
        if op == "synthesize":
            return self._synthesize(h, rng)
        raise BackendFailure(f"unknown op {op!r}")

    # -- per-op generators ---------------------------------------------------

    def _plan(self, cycle: int, rng: random.Random) -> str:
        p = self.profile
        size = p.plan_overrides.get(cycle, p.plan_size)
        if cycle in p.overflow_cycles:
            size = p.overflow_size
        complete = p.completion_cycle is not None and cycle >= p.completion_cycle
        if complete and p.complete_with_empty_plan:
            return json.dumps({"tasks": [], "complete": True})
        tasks = []
        for i in range(size):
            kind = "literature" if i < p.literature_per_cycle else "analysis"
            verb = "Survey prior reports on" if kind == "literature" else "Quantify"
            tasks.append(
                {
                    "kind": kind,
                    "directive": f"{verb} {_sentence(rng)}",
                    "rationale": f"follows from {_sentence(rng)}",
                }
            )
        return json.dumps({"tasks": tasks, "complete": complete})

    def _task_slot(self, h: dict[str, str]) -> tuple[int, int]:
        task = h.get("task", "c000-00")
        m = re.match(r"c(\d+)-(\d+)$", task)
        if not m:
            raise BackendFailure(f"unparseable task id {task!r}")
        return int(m.group(1)), int(m.group(2))

    def _analysis_step(self, h: dict[str, str], cycle: int, rng: random.Random) -> str:
        p = self.profile
        slot = self._task_slot(h)
        step = int(h.get("step", "0"))
        if slot in p.broken_slots:
            raise BackendFailure(f"scripted hard failure for task slot {slot}")
        if slot not in p.step_budget_slots and step >= p.cells_per_task:
            return json.dumps({"stop": True})
        task = h.get("task", "t")
        lines = [
            f"window = select_window({rng.randrange(4, 64)}, {rng.randrange(2, 9)})",
            f"fit = estimate(window, order={rng.randrange(1, 4)})",
        ]
        if slot in p.error_cell_slots and step == 1:
            lines.append("raise_error('fit diverged on scripted input')")
        elif step == p.cells_per_task - 1:
            lines.append(f"save_figure('{task}-s{step}.svg')")
        else:
            lines.append("summary = describe(fit)")
        return json.dumps({"cell": "\n".join(lines)})

    def _literature_step(self, h: dict[str, str], rng: random.Random) -> str:
        p = self.profile
        step = int(h.get("step", "0"))
        if step == 0:
            terms = [rng.choice(_SUBJECTS), rng.choice(_CONTEXTS)]
            return json.dumps({"query": " ".join(terms)})
        hits = [x for x in h.get("hits", "").split(",") if x]
        reads = hits[: p.reads_per_task]
        claims = []
        for doc in reads:
            for _ in range(p.claims_per_read):
                claims.append(
                    {
                        "statement": f"Reported: {_sentence(rng)}",
                        "document_id": doc,
                        "locator": f"p. {rng.randrange(1, 12)}",
                    }
                )
        return json.dumps({"read": reads, "claims": claims, "stop": True})

    def _summarize(self, h: dict[str, str], rng: random.Random) -> str:
        p = self.profile
        task = h.get("task", "t")
        kind = h.get("kind", "analysis")
        drafts: list[dict[str, Any]] = []
        draft_kinds = ["finding", "hypothesis", "open_question"]
        if kind == "analysis":
            cell_count = int(h.get("cells", "0"))
            for j in range(p.drafts_per_task):
                dk = draft_kinds[j % len(draft_kinds)]
                d: dict[str, Any] = {
                    "kind": dk,
                    "statement": f"{_sentence(rng)} [{task}/{j}]",
                }
                if dk != "open_question":
                    picks = sorted({rng.randrange(cell_count)} if cell_count else set())
                    d["cells"] = picks or [0]
                drafts.append(d)
        else:
            docs = [x for x in h.get("documents", "").split(",") if x]
            for j in range(p.drafts_per_task):
                dk = draft_kinds[j % len(draft_kinds)]
                d = {"kind": dk, "statement": f"{_sentence(rng)} [{task}/{j}]"}
                if dk != "open_question":
                    d["documents"] = docs[:1] if docs else []
                drafts.append(d)
        return json.dumps({"drafts": drafts})

    def _synthesize(self, h: dict[str, str], rng: random.Random) -> str:
        p = self.profile
        kind = h.get("kind", "final")
        entries = [x for x in h.get("entries", "").split(",") if x]
        report_count = p.final_reports if kind == "final" else 1
        reports = []
        cursor = 0
        for r in range(report_count):
            narratives = []
            for n in range(p.narratives_per_report):
                claims = []
                for c in range(p.claims_per_narrative):
                    refs = []
                    if entries:
                        refs = [entries[cursor % len(entries)]]
                        cursor += 1
                        if len(entries) > 1 and rng.random() < 0.3:
                            refs.append(entries[cursor % len(entries)])
                            cursor += 1
                    claims.append({"text": f"We find that {_sentence(rng)}.", "entries": refs})
                narratives.append(
                    {
                        "title": f"{_sentence(rng)}".capitalize(),
                        "summary": f"{_sentence(rng)}; {_sentence(rng)}.",
                        "claims": claims,
                    }
                )
            reports.append({"title": f"{_sentence(rng)}".capitalize(), "narratives": narratives})
        if p.inject_unlinked_claim and kind == "final" and reports:
            first = reports[0]["narratives"][0]["claims"][0]
            first["entries"] = []
        return json.dumps({"reports": reports})


# ---------------------------------------------------------------------------
# scripted literature search


class ScriptedSearch:
    """Seeded synthetic corpus with token-overlap ranking.

    The corpus depends only on (seed, corpus_size), never on queries, so
    any query sequence sees one consistent literature.
    """

    def __init__(self, seed: int, corpus_size: int = 40, available: bool = True) -> None:
        self.available = available
        self._docs: dict[str, DocumentText] = {}
        rng = random.Random(seed ^ 0x5EA2C4)
        for i in range(corpus_size):
            doc_id = f"doc-{i:03d}"
            title = f"{_sentence(rng)}".capitalize()
            venue_year = f"J. Synth. Results {1998 + rng.randrange(26)}"
            body = ". ".join(_sentence(rng).capitalize() for _ in range(4)) + "."
            self._docs[doc_id] = DocumentText(doc_id, title, venue_year, body)

    def search(self, query: str, limit: int = 5) -> list[SearchHit]:
        if not self.available:
            raise SearchUnavailable("scripted search is configured offline")
        q_tokens = set(re.findall(r"[a-z]+", query.lower()))
        scored = []
        for doc in self._docs.values():
            tokens = set(re.findall(r"[a-z]+", (doc.title + " " + doc.text).lower()))
            scored.append((len(q_tokens & tokens), doc))
        scored.sort(key=lambda pair: (-pair[0], pair[1].document_id))
        return [
            SearchHit(d.document_id, d.title, d.venue_year, score)
            for score, d in scored[:limit]
        ]

    def fetch(self, document_id: str) -> DocumentText:
        if not self.available:
            raise SearchUnavailable("scripted search is configured offline")
        doc = self._docs.get(document_id)
        if doc is None:
            raise SearchUnavailable(f"unknown document {document_id}")
        return doc


# ---------------------------------------------------------------------------
# scripted executor

_FIGURE_RE = re.compile(r"save_figure\(\s*['\"]([^'\"]+)['\"]\s*\)")
_ERROR_RE = re.compile(r"raise_error\(\s*['\"]([^'\"]*)['\"]\s*\)")


def _svg_for(name: str, token: str) -> bytes:
    return (
        '<svg xmlns="http://www.w3.org/2000/svg" width="320" height="200">'
        f"<title>{name}</title>"
        '<rect x="8" y="8" width="304" height="184" fill="none" stroke="black"/>'
        f'<text x="20" y="104" font-family="monospace">{token}</text>'
        "</svg>\n"
    ).encode("utf-8")


class ScriptedExecutor:
    """Maps cell source to a fabricated result; no code actually runs.

    ``raise_error('msg')`` in the source produces an error result and
    ``save_figure('name.svg')`` produces a deterministic SVG artifact.
    Everything else succeeds with a digest-stamped stdout line. Sessions
    are thread-local so concurrent rollouts never share one; results are
    functions of the source alone, so scheduling cannot leak into output.
    """

    def __init__(self, available: bool = True) -> None:
        self.available = available
        self._local = threading.local()
        self._count_lock = threading.Lock()
        self.sessions_started = 0

    def start_session(self, dataset: str | None = None) -> str:
        if not self.available:
            raise ExecutorUnavailable("scripted executor is configured offline")
        with self._count_lock:
            self.sessions_started += 1
            n = self.sessions_started
        self._local.session = f"s{n:04d}"
        return self._local.session

    def execute(self, source: str) -> ExecutionResult:
        if getattr(self._local, "session", None) is None:
            raise ExecutorUnavailable("no active session")
        token = hashlib.sha256(source.encode("utf-8")).hexdigest()[:8]
        err = _ERROR_RE.search(source)
        if err:
            stderr = (
                "Traceback (most recent call last):\n"
                '  cell line 1, in <module>\n'
                f"RuntimeError: {err.group(1)}\n"
            )
            return ExecutionResult(status="error", stdout="", stderr=stderr)
        artifacts: dict[str, bytes] = {}
        for m in _FIGURE_RE.finditer(source):
            artifacts[m.group(1)] = _svg_for(m.group(1), token)
        return ExecutionResult(status="ok", stdout=f"ok {token}\n", stderr="", artifacts=artifacts)

    def end_session(self) -> None:
        self._local.session = None


def build_scripted_suite(seed: int, profile: ScriptProfile | None = None) -> BackendSuite:
    """Fully deterministic suite for tests and golden runs."""
    prof = profile or ScriptProfile()
    return BackendSuite(
        lm=ScriptedLanguageModel(prof, seed),
        search=ScriptedSearch(seed),
        executor=ScriptedExecutor(),
        clock=ScriptedClock(),
    )


__all__ = [
    "LanguageModel",
    "SearchBackend",
    "ExecutorBackend",
    "Clock",
    "SearchHit",
    "DocumentText",
    "ExecutionResult",
    "SystemClock",
    "ScriptedClock",
    "BackendSuite",
    "ScriptProfile",
    "ScriptedLanguageModel",
    "ScriptedSearch",
    "ScriptedExecutor",
    "build_scripted_suite",
    "request_rng",
    "parse_headers",
]
