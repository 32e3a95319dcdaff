"""Versioned, append-only store of findings shared across agent rollouts.

Entries are immutable once written; supersedence adds a replacement entry
and flips only the old entry's status. Versions form a chain (one child
per commit) where each child's entry set is a superset of its parent's,
so any historical version can be read back exactly. The engine commits
exactly one version per discovery cycle, which keeps version numbers and
cycle indices in lockstep.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

from .canonical import (
    atomic_write_text,
    content_digest,
    dumps_compact,
    dumps_pretty,
    read_json,
    sha256_file,
)
from .errors import (
    AlreadySuperseded,
    CorruptStore,
    InvalidBudget,
    IoFailure,
    MalformedEntry,
    UnknownEntry,
)
from .provenance import ProvenanceEdge, canonicalize_edges

ENTRIES_FORMAT = "wm-entries/1"
VERSIONS_FORMAT = "wm-versions/1"
MANIFEST_FORMAT = "wm-manifest/1"


class EntryKind(str, Enum):
    FINDING = "finding"
    HYPOTHESIS = "hypothesis"
    OPEN_QUESTION = "open_question"
    TASK_NOTE = "task_note"


class EntryStatus(str, Enum):
    ACTIVE = "active"
    SUPERSEDED = "superseded"


# Digest ordering: evidence-bearing kinds render first.
_KIND_PRIORITY = {
    EntryKind.FINDING: 0,
    EntryKind.HYPOTHESIS: 1,
    EntryKind.OPEN_QUESTION: 2,
    EntryKind.TASK_NOTE: 3,
}


@dataclass(frozen=True)
class EntryDraft:
    """Unvalidated candidate entry produced by task summarization."""

    kind: EntryKind
    statement: str
    provenance: list[ProvenanceEdge] = field(default_factory=list)
    cycle_index: int = 0
    supersedes: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "kind": self.kind.value,
            "statement": self.statement,
            "provenance": [e.to_dict() for e in self.provenance],
            "cycle_index": self.cycle_index,
        }
        if self.supersedes is not None:
            d["supersedes"] = self.supersedes
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EntryDraft":
        return cls(
            kind=EntryKind(d["kind"]),
            statement=d["statement"],
            provenance=[ProvenanceEdge.from_dict(e) for e in d.get("provenance", [])],
            cycle_index=d.get("cycle_index", 0),
            supersedes=d.get("supersedes"),
        )


@dataclass(frozen=True)
class WorldModelEntry:
    """Immutable stored entry; ``status`` is resolved against a version."""

    id: str
    kind: EntryKind
    statement: str
    provenance: tuple[ProvenanceEdge, ...]
    cycle_index: int
    content_hash: str
    status: EntryStatus = EntryStatus.ACTIVE

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "statement": self.statement,
            "provenance": [e.to_dict() for e in self.provenance],
            "cycle_index": self.cycle_index,
            "content_hash": self.content_hash,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "WorldModelEntry":
        return cls(
            id=d["id"],
            kind=EntryKind(d["kind"]),
            statement=d["statement"],
            provenance=tuple(ProvenanceEdge.from_dict(e) for e in d["provenance"]),
            cycle_index=d["cycle_index"],
            content_hash=d["content_hash"],
        )


@dataclass(frozen=True)
class WorldModelVersion:
    """One committed snapshot: cumulative entry ids plus status overlay."""

    version: int
    parent: int | None
    created_at_cycle: int
    entry_ids: frozenset[str]
    superseded_ids: frozenset[str]


@dataclass(frozen=True)
class Selector:
    """Conjunctive entry filter; ``status=None`` matches any status."""

    kinds: frozenset[EntryKind] | None = None
    cycle_range: tuple[int, int] | None = None
    status: EntryStatus | None = EntryStatus.ACTIVE
    text_match: str | None = None

    def validate(self) -> None:
        if self.cycle_range is not None:
            lo, hi = self.cycle_range
            if lo < 0 or hi < lo:
                raise ValueError(f"malformed cycle_range {self.cycle_range}")


def entry_content_hash(kind: EntryKind, statement: str, provenance: Sequence[ProvenanceEdge]) -> str:
    """Digest over the canonicalized identity fields; ids derive from it."""
    canon = canonicalize_edges(list(provenance))
    return content_digest(
        {
            "kind": kind.value,
            "statement": statement,
            "provenance": [e.to_dict() for e in canon],
        }
    )


def _validate_draft(draft: EntryDraft) -> None:
    if not draft.statement or not draft.statement.strip():
        raise MalformedEntry(f"{draft.kind.value} draft has an empty statement")
    if draft.cycle_index < 0:
        raise MalformedEntry("draft cycle_index must be non-negative")
    if draft.kind in (EntryKind.FINDING, EntryKind.HYPOTHESIS) and not draft.provenance:
        raise MalformedEntry(
            f"{draft.kind.value} draft {draft.statement[:40]!r} requires provenance"
        )
    for edge in draft.provenance:
        try:
            edge.validate()
        except ValueError as exc:
            raise MalformedEntry(f"bad provenance edge: {exc}") from exc


class WorldModelStore:
    """Holds entry cores and the version chain; single-writer commits.

    Reads of committed versions are lock-free and thread-safe: versions
    and entries are immutable values. Writers serialize on one lock so at
    most one child version is under construction at a time.
    """

    def __init__(self) -> None:
        self._entries: dict[str, WorldModelEntry] = {}
        self._entry_order: list[str] = []
        self._hash_index: dict[str, str] = {}
        self._versions: list[WorldModelVersion] = [
            WorldModelVersion(
                version=0,
                parent=None,
                created_at_cycle=0,
                entry_ids=frozenset(),
                superseded_ids=frozenset(),
            )
        ]
        self._commit_lock = threading.Lock()
        # Incremental-persist bookkeeping (entry log is append-only on disk).
        self._persisted_location: Path | None = None
        self._persisted_entry_count = 0

    # -- introspection ----------------------------------------------------

    @property
    def latest(self) -> WorldModelVersion:
        return self._versions[-1]

    def version(self, number: int) -> WorldModelVersion:
        if not 0 <= number < len(self._versions):
            raise UnknownEntry(f"no such version {number}")
        return self._versions[number]

    @property
    def version_count(self) -> int:
        return len(self._versions)

    def entry(self, entry_id: str, at: WorldModelVersion | None = None) -> WorldModelEntry:
        core = self._entries.get(entry_id)
        if core is None:
            raise UnknownEntry(entry_id)
        version = at if at is not None else self.latest
        if entry_id not in version.entry_ids:
            raise UnknownEntry(f"{entry_id} not present at version {version.version}")
        return self._resolve_status(core, version)

    def has_entry(self, entry_id: str) -> bool:
        return entry_id in self._entries

    @staticmethod
    def _resolve_status(core: WorldModelEntry, version: WorldModelVersion) -> WorldModelEntry:
        status = (
            EntryStatus.SUPERSEDED if core.id in version.superseded_ids else EntryStatus.ACTIVE
        )
        return core if core.status is status else replace(core, status=status)

    # -- write path ---------------------------------------------------------

    def insert_entries(
        self, version: WorldModelVersion, drafts: Sequence[EntryDraft]
    ) -> WorldModelVersion:
        """Commit a child version holding the parent's entries plus drafts.

        Drafts whose content hash already exists (in the store or earlier in
        the same batch) are dropped silently. An empty draft list is the
        identity: the same version is returned and nothing is committed.
        A draft carrying ``supersedes`` also flips that entry's status.
        """
        if not drafts:
            return version
        for draft in drafts:
            _validate_draft(draft)
        cycles = {d.cycle_index for d in drafts}
        if len(cycles) > 1:
            raise MalformedEntry(f"drafts span multiple cycles {sorted(cycles)}")
        (cycle_index,) = cycles

        with self._commit_lock:
            if version.version != self.latest.version:
                raise ValueError(
                    f"insert must build on the latest version "
                    f"({version.version} != {self.latest.version})"
                )
            if cycle_index < version.created_at_cycle:
                raise MalformedEntry(
                    f"draft cycle {cycle_index} precedes version cycle {version.created_at_cycle}"
                )
            added: list[str] = []
            newly_superseded: list[str] = []
            for draft in drafts:
                if draft.supersedes is not None:
                    old = self._entries.get(draft.supersedes)
                    if old is None or draft.supersedes not in version.entry_ids:
                        raise UnknownEntry(draft.supersedes)
                    already = draft.supersedes in version.superseded_ids or (
                        draft.supersedes in newly_superseded
                    )
                    if already:
                        raise AlreadySuperseded(draft.supersedes)
                    newly_superseded.append(draft.supersedes)
                digest = entry_content_hash(draft.kind, draft.statement, draft.provenance)
                if digest in self._hash_index:
                    continue  # idempotent re-submission
                entry = WorldModelEntry(
                    id="e" + digest[:12],
                    kind=draft.kind,
                    statement=draft.statement,
                    provenance=tuple(canonicalize_edges(list(draft.provenance))),
                    cycle_index=draft.cycle_index,
                    content_hash=digest,
                )
                self._entries[entry.id] = entry
                self._entry_order.append(entry.id)
                self._hash_index[digest] = entry.id
                added.append(entry.id)

            child = WorldModelVersion(
                version=version.version + 1,
                parent=version.version,
                created_at_cycle=cycle_index,
                entry_ids=version.entry_ids | frozenset(added),
                superseded_ids=version.superseded_ids | frozenset(newly_superseded),
            )
            self._versions.append(child)
            return child

    def supersede(
        self, version: WorldModelVersion, old_id: str, replacement: EntryDraft
    ) -> WorldModelVersion:
        """Replace an active entry: old flips to superseded, replacement enters active.

        The replacement automatically carries a lineage edge back to the old
        entry so the chain of revisions stays traceable.
        """
        if old_id not in self._entries or old_id not in version.entry_ids:
            raise UnknownEntry(old_id)
        if old_id in version.superseded_ids:
            raise AlreadySuperseded(old_id)
        lineage = ProvenanceEdge.to_entry(old_id)
        edges = list(replacement.provenance)
        if not any(e.canonical_key() == lineage.canonical_key() for e in edges):
            edges.append(lineage)
        draft = replace(replacement, provenance=edges, supersedes=old_id)
        return self.insert_entries(version, [draft])

    # -- read path ----------------------------------------------------------

    def entries_at(self, version: WorldModelVersion) -> list[WorldModelEntry]:
        """All entries present at a version, statuses resolved, insertion order."""
        return [
            self._resolve_status(self._entries[eid], version)
            for eid in self._entry_order
            if eid in version.entry_ids
        ]

    def query(self, version: WorldModelVersion, selector: Selector | None = None) -> list[WorldModelEntry]:
        """Entries matching every given selector field.

        Ordered by cycle_index descending, then id ascending. The default
        selector keeps active entries only.
        """
        sel = selector or Selector()
        sel.validate()
        out = []
        for entry in self.entries_at(version):
            if sel.kinds is not None and entry.kind not in sel.kinds:
                continue
            if sel.cycle_range is not None:
                lo, hi = sel.cycle_range
                if not lo <= entry.cycle_index <= hi:
                    continue
            if sel.status is not None and entry.status is not sel.status:
                continue
            if sel.text_match is not None and sel.text_match.lower() not in entry.statement.lower():
                continue
            out.append(entry)
        out.sort(key=lambda e: (-e.cycle_index, e.id))
        return out

    def context_digest(self, version: WorldModelVersion, char_budget: int) -> str:
        """Deterministic text rendering of active entries for the planner.

        Entries are ordered newest cycle first, evidence-bearing kinds
        first within a cycle, and are dropped whole (never split) once
        the budget is exhausted; a trailing marker counts omissions.
        """
        if char_budget <= 0:
            raise InvalidBudget(f"char_budget must be positive, got {char_budget}")
        header = f"# world model v{version.version} (cycle {version.created_at_cycle})\n"
        active = [e for e in self.entries_at(version) if e.status is EntryStatus.ACTIVE]
        active.sort(key=lambda e: (-e.cycle_index, _KIND_PRIORITY[e.kind], e.id))
        lines = [f"- [{e.kind.value}|c{e.cycle_index}|{e.id}] {e.statement}\n" for e in active]

        total = len(header) + sum(len(ln) for ln in lines)
        if total <= char_budget:
            return header + "".join(lines)

        kept: list[str] = []
        for i, line in enumerate(lines):
            marker = f"… {len(lines) - (i + 1)} entries truncated\n"
            candidate = len(header) + sum(len(k) for k in kept) + len(line) + len(marker)
            if candidate > char_budget:
                break
            kept.append(line)
        omitted = len(lines) - len(kept)
        return header + "".join(kept) + f"… {omitted} entries truncated\n"

    # -- persistence ----------------------------------------------------------

    def persist(self, location: Path | str) -> None:
        """Write the store under ``location``; entry log grows append-only."""
        root = Path(location)
        try:
            root.mkdir(parents=True, exist_ok=True)
            log_path = root / "entries.log"
            fresh = (
                self._persisted_location != root
                or not log_path.exists()
                or self._persisted_entry_count > len(self._entry_order)
            )
            if fresh:
                lines = [dumps_compact({"format": ENTRIES_FORMAT})]
                lines += [dumps_compact(self._entries[eid].to_dict()) for eid in self._entry_order]
                atomic_write_text(log_path, "\n".join(lines) + "\n")
            elif self._persisted_entry_count < len(self._entry_order):
                with open(log_path, "a", encoding="utf-8") as fh:
                    for eid in self._entry_order[self._persisted_entry_count :]:
                        fh.write(dumps_compact(self._entries[eid].to_dict()) + "\n")
            self._persisted_location = root
            self._persisted_entry_count = len(self._entry_order)

            versions_payload = {
                "format": VERSIONS_FORMAT,
                "versions": [
                    {
                        "version": v.version,
                        "parent": v.parent,
                        "created_at_cycle": v.created_at_cycle,
                        "entry_ids": sorted(v.entry_ids),
                        "superseded_ids": sorted(v.superseded_ids),
                    }
                    for v in self._versions
                ],
            }
            atomic_write_text(root / "versions.json", dumps_pretty(versions_payload))

            manifest = {
                "format": MANIFEST_FORMAT,
                "files": {
                    "entries.log": sha256_file(log_path),
                    "versions.json": sha256_file(root / "versions.json"),
                },
            }
            atomic_write_text(root / "manifest.json", dumps_pretty(manifest))
        except OSError as exc:
            raise IoFailure(f"cannot persist world model under {root}: {exc}") from exc

    @classmethod
    def load(cls, location: Path | str) -> "WorldModelStore":
        """Reconstruct a store, verifying the manifest checksums first."""
        root = Path(location)
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise CorruptStore(f"no world-model manifest at {root}")
        try:
            manifest = read_json(manifest_path)
        except ValueError as exc:
            raise CorruptStore(f"unreadable manifest: {exc}") from exc
        if manifest.get("format") != MANIFEST_FORMAT:
            raise CorruptStore(f"unexpected manifest format {manifest.get('format')!r}")
        for name, digest in manifest.get("files", {}).items():
            path = root / name
            if not path.exists():
                raise CorruptStore(f"manifest names missing file {name}")
            actual = sha256_file(path)
            if actual != digest:
                raise CorruptStore(f"checksum mismatch for {name}")

        store = cls()
        try:
            raw_lines = (root / "entries.log").read_text(encoding="utf-8").splitlines()
            versions_doc = read_json(root / "versions.json")
        except (OSError, ValueError) as exc:
            raise CorruptStore(f"unreadable store files: {exc}") from exc
        if not raw_lines or read_header(raw_lines[0]) != ENTRIES_FORMAT:
            raise CorruptStore("entries.log missing format header")
        if versions_doc.get("format") != VERSIONS_FORMAT:
            raise CorruptStore("versions.json missing format header")

        import json as _json

        for line in raw_lines[1:]:
            if not line.strip():
                continue
            entry = WorldModelEntry.from_dict(_json.loads(line))
            store._entries[entry.id] = entry
            store._entry_order.append(entry.id)
            store._hash_index[entry.content_hash] = entry.id
        store._versions = [
            WorldModelVersion(
                version=v["version"],
                parent=v["parent"],
                created_at_cycle=v["created_at_cycle"],
                entry_ids=frozenset(v["entry_ids"]),
                superseded_ids=frozenset(v["superseded_ids"]),
            )
            for v in versions_doc["versions"]
        ]
        if not store._versions or store._versions[0].version != 0 or store._versions[0].entry_ids:
            raise CorruptStore("version chain must start at an empty version 0")
        for prev, cur in zip(store._versions, store._versions[1:]):
            if cur.parent != prev.version or not prev.entry_ids <= cur.entry_ids:
                raise CorruptStore(f"version {cur.version} breaks the append-only chain")
        store._persisted_location = root
        store._persisted_entry_count = len(store._entry_order)
        return store


def read_header(line: str) -> str | None:
    """Format tag from a JSONL header line, or None."""
    import json as _json

    try:
        obj = _json.loads(line)
    except ValueError:
        return None
    return obj.get("format") if isinstance(obj, dict) else None
