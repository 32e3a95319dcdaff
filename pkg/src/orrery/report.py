"""Discovery reports: synthesis from the world model, audit, rendering.

A report is only as good as its evidence trail. Every claim must resolve,
through the world-model entries it cites, to at least one notebook cell
or literature citation; lineage edges between entries are expanded
transitively. Reports that cannot satisfy this are rejected outright,
never silently repaired, and only validated reports may be rendered.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Callable, Mapping, Sequence

from .agents import complete_json
from .backends import BackendSuite
from .errors import ProvenanceIncomplete, UnknownEntry, UnvalidatedReport
from .provenance import EdgeKind, ProvenanceEdge, canonicalize_edges
from .worldmodel import EntryKind, Selector, WorldModelStore, WorldModelVersion

CATEGORY_DATA = "data_analysis"
CATEGORY_LITERATURE = "literature"
CATEGORY_INTERPRETATION = "interpretation"


@dataclass(frozen=True)
class Claim:
    """One reported statement and its fully resolved evidence."""

    claim_id: str
    text: str
    entry_ids: tuple[str, ...]
    edges: tuple[ProvenanceEdge, ...]
    category: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "claim_id": self.claim_id,
            "text": self.text,
            "entry_ids": list(self.entry_ids),
            "edges": [e.to_dict() for e in self.edges],
            "category": self.category,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Claim":
        return cls(
            claim_id=d["claim_id"],
            text=d["text"],
            entry_ids=tuple(d["entry_ids"]),
            edges=tuple(ProvenanceEdge.from_dict(e) for e in d["edges"]),
            category=d["category"],
        )


@dataclass(frozen=True)
class FigureRef:
    trajectory_id: str
    name: str

    def to_dict(self) -> dict[str, str]:
        return {"trajectory_id": self.trajectory_id, "name": self.name}


@dataclass(frozen=True)
class Narrative:
    title: str
    summary: str
    claims: tuple[Claim, ...]
    figures: tuple[FigureRef, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "title": self.title,
            "summary": self.summary,
            "claims": [c.to_dict() for c in self.claims],
            "figures": [f.to_dict() for f in self.figures],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Narrative":
        return cls(
            title=d["title"],
            summary=d["summary"],
            claims=tuple(Claim.from_dict(c) for c in d["claims"]),
            figures=tuple(FigureRef(**f) for f in d.get("figures", [])),
        )


@dataclass(frozen=True)
class DiscoveryReport:
    report_id: str
    kind: str  # final | checkpoint
    cycle_index: int
    wm_version: int
    title: str
    narratives: tuple[Narrative, ...]
    degenerate: bool = False
    validated: bool = False

    def claims(self) -> list[Claim]:
        return [c for n in self.narratives for c in n.claims]

    def to_dict(self) -> dict[str, Any]:
        return {
            "report_id": self.report_id,
            "kind": self.kind,
            "cycle_index": self.cycle_index,
            "wm_version": self.wm_version,
            "title": self.title,
            "degenerate": self.degenerate,
            "validated": self.validated,
            "narratives": [n.to_dict() for n in self.narratives],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DiscoveryReport":
        return cls(
            report_id=d["report_id"],
            kind=d["kind"],
            cycle_index=d["cycle_index"],
            wm_version=d["wm_version"],
            title=d["title"],
            degenerate=d.get("degenerate", False),
            validated=d.get("validated", False),
            narratives=tuple(Narrative.from_dict(n) for n in d["narratives"]),
        )


# ---------------------------------------------------------------------------
# evidence resolution


def expand_entry_edges(
    store: WorldModelStore, version: WorldModelVersion, entry_id: str
) -> list[ProvenanceEdge]:
    """All cell/citation edges reachable from an entry, lineage followed.

    Lineage edges never appear in the result; they are pointers to walk,
    not evidence in themselves. Raises UnknownEntry for dangling ids.
    """
    out: list[ProvenanceEdge] = []
    seen: set[str] = set()
    stack = [entry_id]
    while stack:
        eid = stack.pop()
        if eid in seen:
            continue
        seen.add(eid)
        entry = store.entry(eid, at=version)  # raises UnknownEntry when dangling
        for edge in entry.provenance:
            if edge.kind is EdgeKind.WORLD_MODEL_ENTRY:
                stack.append(edge.entry_id)  # type: ignore[arg-type]
            else:
                out.append(edge)
    return canonicalize_edges(out)


def classify_claim_category(edges: Sequence[ProvenanceEdge]) -> str:
    """Claims are typed by what kind of evidence ultimately backs them."""
    kinds = {e.kind for e in edges}
    has_cells = EdgeKind.NOTEBOOK_CELL in kinds
    has_cites = EdgeKind.CITATION in kinds
    if has_cells and has_cites:
        return CATEGORY_INTERPRETATION
    if has_cells:
        return CATEGORY_DATA
    if has_cites:
        return CATEGORY_LITERATURE
    raise ValueError("cannot classify a claim with no evidence edges")


# ---------------------------------------------------------------------------
# synthesis


def _kind_letter(kind: str) -> str:
    return {"final": "f", "checkpoint": "k"}[kind]


def _degenerate_report(kind: str, cycle_index: int, wm_version: int) -> DiscoveryReport:
    report_id = f"rep-c{cycle_index:04d}-{_kind_letter(kind)}1"
    narrative = Narrative(
        title="No supported findings",
        summary=(
            "The world model holds no active evidence-backed entries at "
            "this point, so nothing can be reported with provenance."
        ),
        claims=(),
    )
    return DiscoveryReport(
        report_id=report_id,
        kind=kind,
        cycle_index=cycle_index,
        wm_version=wm_version,
        title="Empty synthesis",
        narratives=(narrative,),
        degenerate=True,
    )


def synthesize_reports(
    store: WorldModelStore,
    version: WorldModelVersion,
    suite: BackendSuite,
    kind: str,
    cycle_index: int,
    artifact_names: Mapping[str, Sequence[str]] | None = None,
    retries: int = 1,
    backoff_base: float = 0.0,
) -> list[DiscoveryReport]:
    """Ask the model for reports over the active evidence-backed entries.

    Checkpoint synthesis yields one report; final synthesis yields the
    model's full set. A claim citing no entries, citing an unknown entry,
    or resolving to zero evidence edges aborts the whole synthesis with
    ProvenanceIncomplete: a report with even one unauditable claim is not
    a report.
    """
    if kind not in ("final", "checkpoint"):
        raise ValueError(f"unknown report kind {kind!r}")
    claimable = store.query(
        version, Selector(kinds=frozenset({EntryKind.FINDING, EntryKind.HYPOTHESIS}))
    )
    if not claimable:
        return [_degenerate_report(kind, cycle_index, version.version)]

    entry_ids = [e.id for e in claimable]
    body = "\n".join(f"[{e.id}] {e.statement}" for e in claimable)
    reply = complete_json(
        suite.lm,
        {
            "op": "synthesize",
            "cycle": cycle_index,
            "kind": kind,
            "entries": ",".join(entry_ids),
        },
        body=body,
        retries=retries,
        backoff_base=backoff_base,
    )

    fig_map = {tid: tuple(sorted(names)) for tid, names in (artifact_names or {}).items()}
    reports: list[DiscoveryReport] = []
    raw_reports = reply.get("reports", [])
    for r_idx, raw_report in enumerate(raw_reports):
        report_id = f"rep-c{cycle_index:04d}-{_kind_letter(kind)}{r_idx + 1}"
        narratives: list[Narrative] = []
        for n_idx, raw_nar in enumerate(raw_report.get("narratives", [])):
            claims: list[Claim] = []
            for c_idx, raw_claim in enumerate(raw_nar.get("claims", [])):
                claim_id = f"{report_id}:n{n_idx + 1}:c{c_idx + 1}"
                cited = tuple(raw_claim.get("entries", []))
                if not cited:
                    raise ProvenanceIncomplete(
                        claim_id, f"claim {claim_id} cites no world-model entries"
                    )
                edges: list[ProvenanceEdge] = []
                for eid in cited:
                    try:
                        edges.extend(expand_entry_edges(store, version, eid))
                    except UnknownEntry as exc:
                        raise ProvenanceIncomplete(
                            claim_id, f"claim {claim_id} cites unknown entry {eid}"
                        ) from exc
                edges = canonicalize_edges(edges)
                if not edges:
                    raise ProvenanceIncomplete(
                        claim_id, f"claim {claim_id} resolves to no evidence edges"
                    )
                claims.append(
                    Claim(
                        claim_id=claim_id,
                        text=raw_claim.get("text", ""),
                        entry_ids=cited,
                        edges=tuple(edges),
                        category=classify_claim_category(edges),
                    )
                )
            figures = _narrative_figures(claims, fig_map)
            narratives.append(
                Narrative(
                    title=raw_nar.get("title", f"Narrative {n_idx + 1}"),
                    summary=raw_nar.get("summary", ""),
                    claims=tuple(claims),
                    figures=figures,
                )
            )
        reports.append(
            DiscoveryReport(
                report_id=report_id,
                kind=kind,
                cycle_index=cycle_index,
                wm_version=version.version,
                title=raw_report.get("title", f"Report {r_idx + 1}"),
                narratives=tuple(narratives),
            )
        )
    if kind == "checkpoint":
        reports = reports[:1]
    if not reports:
        return [_degenerate_report(kind, cycle_index, version.version)]
    return reports


def _narrative_figures(
    claims: Sequence[Claim], fig_map: Mapping[str, tuple[str, ...]]
) -> tuple[FigureRef, ...]:
    """Figures produced by the trajectories whose cells back these claims."""
    refs: set[FigureRef] = set()
    for claim in claims:
        for edge in claim.edges:
            if edge.kind is EdgeKind.NOTEBOOK_CELL and edge.trajectory_id in fig_map:
                for name in fig_map[edge.trajectory_id]:
                    refs.add(FigureRef(edge.trajectory_id, name))
    return tuple(sorted(refs, key=lambda f: (f.trajectory_id, f.name)))


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationFailure:
    code: str  # missing-edges | dangling-reference | missing-quote | missing-locator | dangling-figure
    where: str  # claim id or figure ref
    detail: str

    def to_dict(self) -> dict[str, str]:
        return {"code": self.code, "where": self.where, "detail": self.detail}


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    failures: tuple[ValidationFailure, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"ok": self.ok, "failures": [f.to_dict() for f in self.failures]}


def validate_report(
    report: DiscoveryReport,
    store: WorldModelStore,
    artifact_exists: Callable[[str, str], bool] | None = None,
) -> ValidationResult:
    """Audit a report against the store it was synthesized from.

    Re-resolves every claim's entries and compares with the stored edges,
    so a report file cannot drift from its evidence unnoticed. Figure
    references are checked against materialized artifacts when a lookup
    is provided.
    """
    failures: list[ValidationFailure] = []
    version = store.version(report.wm_version)
    for narrative in report.narratives:
        for claim in narrative.claims:
            if not claim.entry_ids or not claim.edges:
                failures.append(
                    ValidationFailure(
                        "missing-edges", claim.claim_id, "claim carries no resolved evidence"
                    )
                )
                continue
            expected: list[ProvenanceEdge] = []
            dangling = False
            for eid in claim.entry_ids:
                try:
                    expected.extend(expand_entry_edges(store, version, eid))
                except UnknownEntry:
                    failures.append(
                        ValidationFailure(
                            "dangling-reference", claim.claim_id, f"unknown entry {eid}"
                        )
                    )
                    dangling = True
            if dangling:
                continue
            want = {e.canonical_key() for e in canonicalize_edges(expected)}
            got = {e.canonical_key() for e in claim.edges}
            if want != got:
                failures.append(
                    ValidationFailure(
                        "dangling-reference",
                        claim.claim_id,
                        "stored edges do not match re-resolved evidence",
                    )
                )
            for edge in claim.edges:
                if edge.kind is EdgeKind.CITATION and edge.citation is not None:
                    if not edge.citation.quote.strip():
                        failures.append(
                            ValidationFailure(
                                "missing-quote", claim.claim_id, edge.citation.document_id
                            )
                        )
                    if not edge.citation.locator.strip():
                        failures.append(
                            ValidationFailure(
                                "missing-locator", claim.claim_id, edge.citation.document_id
                            )
                        )
        if artifact_exists is not None:
            for fig in narrative.figures:
                if not artifact_exists(fig.trajectory_id, fig.name):
                    failures.append(
                        ValidationFailure(
                            "dangling-figure",
                            f"{fig.trajectory_id}/{fig.name}",
                            "figure artifact not materialized",
                        )
                    )
    return ValidationResult(ok=not failures, failures=tuple(failures))


def mark_validated(report: DiscoveryReport, result: ValidationResult) -> DiscoveryReport:
    if not result.ok:
        raise UnvalidatedReport(
            f"report {report.report_id} failed validation: "
            + "; ".join(f.code for f in result.failures)
        )
    return replace(report, validated=True)


# ---------------------------------------------------------------------------
# rendering


def _edge_label(edge: ProvenanceEdge) -> str:
    if edge.kind is EdgeKind.NOTEBOOK_CELL:
        return f"cell {edge.trajectory_id}#{edge.cell_index}"
    if edge.kind is EdgeKind.CITATION and edge.citation is not None:
        c = edge.citation
        return f"{c.title} ({c.venue_year}), {c.locator}"
    return f"entry {edge.entry_id}"


def render_report(report: DiscoveryReport, fmt: str = "markdown") -> str:
    """Render a validated report; the evidence trail renders with it.

    Formats: ``markdown``, ``html``, ``json``. Unvalidated or degenerate-
    but-unvalidated reports are refused so nothing unaudited ships.
    """
    if not report.validated:
        raise UnvalidatedReport(
            f"report {report.report_id} has not passed validation; refusing to render"
        )
    if fmt == "json":
        from .canonical import dumps_pretty

        return dumps_pretty(report.to_dict())
    if fmt == "markdown":
        return _render_markdown(report)
    if fmt == "html":
        inner = _render_markdown(report)
        import html as _html

        return (
            "<!-- rendered from report "
            + report.report_id
            + " -->\n<article><pre>\n"
            + _html.escape(inner)
            + "</pre></article>\n"
        )
    raise ValueError(f"unknown render format {fmt!r}")


def _render_markdown(report: DiscoveryReport) -> str:
    lines = [
        f"# {report.title}",
        "",
        f"*{report.kind} report {report.report_id}, cycle {report.cycle_index}, "
        f"world model v{report.wm_version}*",
        "",
    ]
    if report.degenerate:
        lines.append("> No evidence-backed entries were available for synthesis.")
        lines.append("")
    for narrative in report.narratives:
        lines.append(f"## {narrative.title}")
        lines.append("")
        if narrative.summary:
            lines.append(narrative.summary)
            lines.append("")
        for claim in narrative.claims:
            lines.append(f"- **{claim.claim_id}** [{claim.category}] {claim.text}")
            for edge in claim.edges:
                lines.append(f"  - evidence: {_edge_label(edge)}")
        if narrative.claims:
            lines.append("")
        if narrative.figures:
            for fig in narrative.figures:
                lines.append(f"![{fig.name}](../artifacts/{fig.trajectory_id}/{fig.name})")
            lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def evidence_link_count(report: DiscoveryReport) -> int:
    """Total resolved evidence edges across all claims."""
    return sum(len(c.edges) for c in report.claims())
