"""Evidence links shared by world-model entries and report claims.

An edge points at exactly one of: an executed notebook cell inside a
trajectory, a cited document read by a literature rollout, or an earlier
world-model entry (supersedence lineage only; report claims never carry
entry edges directly, they inherit the target's cell/citation edges).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any

from .canonical import dumps_compact


class EdgeKind(str, Enum):
    NOTEBOOK_CELL = "notebook_cell"
    CITATION = "citation"
    WORLD_MODEL_ENTRY = "world_model_entry"


@dataclass(frozen=True)
class Citation:
    """A literature reference with a verbatim quote anchoring the claim."""

    document_id: str
    title: str
    venue_year: str
    locator: str
    quote: str

    def validate(self) -> None:
        if not self.document_id:
            raise ValueError("citation requires a document_id")
        if not self.locator:
            raise ValueError(f"citation {self.document_id} missing locator")
        if not self.quote:
            raise ValueError(f"citation {self.document_id} missing quote")

    def to_dict(self) -> dict[str, Any]:
        return {
            "document_id": self.document_id,
            "title": self.title,
            "venue_year": self.venue_year,
            "locator": self.locator,
            "quote": self.quote,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Citation":
        return cls(
            document_id=d["document_id"],
            title=d.get("title", ""),
            venue_year=d.get("venue_year", ""),
            locator=d["locator"],
            quote=d["quote"],
        )


@dataclass(frozen=True)
class ProvenanceEdge:
    """Resolvable link from a statement to one piece of evidence.

    Exactly one target is populated, selected by ``kind``:
      notebook_cell      -> (trajectory_id, cell_index)
      citation           -> (trajectory_id, citation)
      world_model_entry  -> entry_id
    """

    kind: EdgeKind
    trajectory_id: str | None = None
    cell_index: int | None = None
    citation: Citation | None = None
    entry_id: str | None = None

    @classmethod
    def to_cell(cls, trajectory_id: str, cell_index: int) -> "ProvenanceEdge":
        return cls(kind=EdgeKind.NOTEBOOK_CELL, trajectory_id=trajectory_id, cell_index=cell_index)

    @classmethod
    def to_citation(cls, trajectory_id: str, citation: Citation) -> "ProvenanceEdge":
        return cls(kind=EdgeKind.CITATION, trajectory_id=trajectory_id, citation=citation)

    @classmethod
    def to_entry(cls, entry_id: str) -> "ProvenanceEdge":
        return cls(kind=EdgeKind.WORLD_MODEL_ENTRY, entry_id=entry_id)

    def validate(self) -> None:
        if self.kind is EdgeKind.NOTEBOOK_CELL:
            if not self.trajectory_id or self.cell_index is None or self.cell_index < 0:
                raise ValueError("cell edge requires trajectory_id and cell_index >= 0")
            if self.citation is not None or self.entry_id is not None:
                raise ValueError("cell edge must not carry citation/entry targets")
        elif self.kind is EdgeKind.CITATION:
            if not self.trajectory_id or self.citation is None:
                raise ValueError("citation edge requires trajectory_id and citation")
            if self.cell_index is not None or self.entry_id is not None:
                raise ValueError("citation edge must not carry cell/entry targets")
            self.citation.validate()
        elif self.kind is EdgeKind.WORLD_MODEL_ENTRY:
            if not self.entry_id:
                raise ValueError("entry edge requires entry_id")
            if self.trajectory_id is not None or self.cell_index is not None or self.citation is not None:
                raise ValueError("entry edge must not carry trajectory targets")
        else:  # pragma: no cover - enum is closed
            raise ValueError(f"unknown edge kind {self.kind!r}")

    def to_dict(self) -> dict[str, Any]:
        if self.kind is EdgeKind.NOTEBOOK_CELL:
            return {
                "kind": self.kind.value,
                "trajectory_id": self.trajectory_id,
                "cell_index": self.cell_index,
            }
        if self.kind is EdgeKind.CITATION:
            assert self.citation is not None
            return {
                "kind": self.kind.value,
                "trajectory_id": self.trajectory_id,
                "citation": self.citation.to_dict(),
            }
        return {"kind": self.kind.value, "entry_id": self.entry_id}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ProvenanceEdge":
        kind = EdgeKind(d["kind"])
        if kind is EdgeKind.NOTEBOOK_CELL:
            return cls.to_cell(d["trajectory_id"], d["cell_index"])
        if kind is EdgeKind.CITATION:
            return cls.to_citation(d["trajectory_id"], Citation.from_dict(d["citation"]))
        return cls.to_entry(d["entry_id"])

    def canonical_key(self) -> str:
        """Stable sort/equality key used when canonicalizing edge lists."""
        return dumps_compact(self.to_dict())


def canonicalize_edges(edges: list[ProvenanceEdge]) -> list[ProvenanceEdge]:
    """Sorted, de-duplicated edge list; the hashing form of provenance."""
    seen: dict[str, ProvenanceEdge] = {}
    for e in edges:
        seen.setdefault(e.canonical_key(), e)
    return [seen[k] for k in sorted(seen)]
