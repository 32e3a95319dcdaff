"""Human evaluation support: sampling claims, scoring verdicts, trend fits.

Reviewers receive a stratified sample of reported claims, return a
verdict per claim, and the harness turns those into per-category accuracy
figures. Claims a reviewer could not settle start as UNSURE and either
get resolved in a follow-up pass or drop out of scoring with a warning.
"""

from __future__ import annotations

import hashlib
import random
import statistics
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

from .canonical import atomic_write_text, dumps_pretty, read_json
from .errors import EmptySeries, SampleTooLarge, UnknownClaim

VERDICTS_FORMAT = "verdicts/1"
SAMPLE_FORMAT = "eval-sample/1"

# Tie-break priority when remainders draw level: favor the category that
# is hardest to collect enough of.
_CATEGORY_PRIORITY = {"interpretation": 0, "literature": 1, "data_analysis": 2}


class Verdict(str, Enum):
    SUPPORTED = "supported"
    REFUTED = "refuted"
    UNSURE = "unsure"


@dataclass(frozen=True)
class VerdictRecord:
    claim_id: str
    verdict: Verdict
    resolution: Verdict | None = None  # follow-up outcome for UNSURE rows

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"claim_id": self.claim_id, "verdict": self.verdict.value}
        if self.resolution is not None:
            d["resolution"] = self.resolution.value
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "VerdictRecord":
        res = d.get("resolution")
        return cls(
            claim_id=d["claim_id"],
            verdict=Verdict(d["verdict"]),
            resolution=Verdict(res) if res is not None else None,
        )

    def effective(self) -> Verdict | None:
        """The verdict that enters scoring, or None when it must drop out."""
        if self.verdict is not Verdict.UNSURE:
            return self.verdict
        if self.resolution in (Verdict.SUPPORTED, Verdict.REFUTED):
            return self.resolution
        return None


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class SampledClaim:
    claim_id: str
    category: str
    text: str

    def to_dict(self) -> dict[str, str]:
        return {"claim_id": self.claim_id, "category": self.category, "text": self.text}


def sample_statements(
    claims: Sequence[SampledClaim], size: int, seed: int
) -> list[SampledClaim]:
    """Stratified sample, proportional by category via largest remainder.

    Quotas floor the proportional share; leftover slots go to the largest
    fractional remainders, ties resolved toward the smaller bucket and
    then toward interpretation. Within a bucket the pick is a seeded
    shuffle, so the same (claims, size, seed) always yields the same
    sample. Output order is category-grouped, claim_id-sorted.
    """
    if size > len(claims):
        raise SampleTooLarge(f"requested {size} of {len(claims)} claims")
    if size < 0:
        raise SampleTooLarge("sample size must be non-negative")
    buckets: dict[str, list[SampledClaim]] = {}
    for claim in claims:
        buckets.setdefault(claim.category, []).append(claim)
    for bucket in buckets.values():
        bucket.sort(key=lambda c: c.claim_id)

    total = len(claims)
    names = sorted(buckets)
    quotas: dict[str, int] = {}
    remainders: list[tuple[float, int, int, str]] = []
    for name in names:
        exact = size * len(buckets[name]) / total
        quotas[name] = int(exact)
        remainders.append(
            (
                -(exact - int(exact)),
                len(buckets[name]),
                _CATEGORY_PRIORITY.get(name, 99),
                name,
            )
        )
    remainders.sort()
    short = size - sum(quotas.values())
    for _, _, _, name in remainders:
        if short <= 0:
            break
        if quotas[name] < len(buckets[name]):
            quotas[name] += 1
            short -= 1

    out: list[SampledClaim] = []
    for name in names:
        pool = list(buckets[name])
        digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
        random.Random(int.from_bytes(digest[:8], "big")).shuffle(pool)
        picked = sorted(pool[: quotas[name]], key=lambda c: c.claim_id)
        out.extend(picked)
    return out


# ---------------------------------------------------------------------------
# scoring


@dataclass(frozen=True)
class CategoryScore:
    supported: int
    refuted: int

    @property
    def total(self) -> int:
        return self.supported + self.refuted

    @property
    def accuracy_pct(self) -> float | None:
        if self.total == 0:
            return None
        return round(100.0 * self.supported / self.total, 1)

    def to_dict(self) -> dict[str, Any]:
        return {
            "supported": self.supported,
            "refuted": self.refuted,
            "accuracy_pct": self.accuracy_pct,
        }


@dataclass(frozen=True)
class AccuracyBreakdown:
    per_category: dict[str, CategoryScore]
    overall: CategoryScore
    excluded_unsure: int
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_category": {k: v.to_dict() for k, v in sorted(self.per_category.items())},
            "overall": self.overall.to_dict(),
            "excluded_unsure": self.excluded_unsure,
            "warnings": list(self.warnings),
        }


def score_accuracy(
    records: Sequence[VerdictRecord], categories: Mapping[str, str]
) -> AccuracyBreakdown:
    """Per-category and overall accuracy from reviewer verdicts.

    ``categories`` maps claim_id to its category; a verdict for an
    unknown claim is an error. Unresolved UNSURE rows are excluded and
    produce a warning rather than silently shifting the denominator.
    """
    counts: dict[str, dict[Verdict, int]] = {}
    excluded = 0
    warnings: list[str] = []
    for record in records:
        category = categories.get(record.claim_id)
        if category is None:
            raise UnknownClaim(record.claim_id)
        effective = record.effective()
        if effective is None:
            excluded += 1
            warnings.append(f"claim {record.claim_id} is unresolved UNSURE; excluded")
            continue
        bucket = counts.setdefault(category, {Verdict.SUPPORTED: 0, Verdict.REFUTED: 0})
        bucket[effective] += 1
    per_category = {
        name: CategoryScore(v[Verdict.SUPPORTED], v[Verdict.REFUTED])
        for name, v in counts.items()
    }
    overall = CategoryScore(
        sum(s.supported for s in per_category.values()),
        sum(s.refuted for s in per_category.values()),
    )
    return AccuracyBreakdown(
        per_category=per_category,
        overall=overall,
        excluded_unsure=excluded,
        warnings=tuple(warnings),
    )


# ---------------------------------------------------------------------------
# findings trend


@dataclass(frozen=True)
class FindingsCurve:
    cycles: tuple[int, ...]
    cumulative: tuple[int, ...]
    slope: float
    intercept: float
    degenerate: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "cycles": list(self.cycles),
            "cumulative": list(self.cumulative),
            "slope": self.slope,
            "intercept": self.intercept,
            "degenerate": self.degenerate,
        }


def findings_curve(per_cycle_counts: Sequence[int]) -> FindingsCurve:
    """Cumulative findings per cycle with an ordinary least-squares fit.

    The fit is the plain two-parameter regression of cumulative count on
    cycle index. One single cycle cannot define a slope; that case is
    returned flagged degenerate with slope 0.
    """
    if not per_cycle_counts:
        raise EmptySeries("findings curve needs at least one completed cycle")
    cycles = tuple(range(1, len(per_cycle_counts) + 1))
    cumulative = []
    running = 0
    for count in per_cycle_counts:
        running += count
        cumulative.append(running)
    if len(cycles) == 1:
        return FindingsCurve(cycles, tuple(cumulative), 0.0, float(cumulative[0]), True)
    slope, intercept = statistics.linear_regression(cycles, cumulative)
    return FindingsCurve(cycles, tuple(cumulative), slope, intercept)


def findings_counts_from_store(store, cycles_completed: int) -> list[int]:
    """Findings inserted per cycle, straight from entry metadata."""
    from .worldmodel import EntryKind

    counts = [0] * cycles_completed
    for entry in store.entries_at(store.latest):
        if entry.kind is EntryKind.FINDING and 1 <= entry.cycle_index <= cycles_completed:
            counts[entry.cycle_index - 1] += 1
    return counts


# ---------------------------------------------------------------------------
# files


def write_sample(path: Path | str, claims: Sequence[SampledClaim]) -> None:
    atomic_write_text(
        Path(path),
        dumps_pretty({"format": SAMPLE_FORMAT, "claims": [c.to_dict() for c in claims]}),
    )


def read_sample(path: Path | str) -> list[SampledClaim]:
    doc = read_json(Path(path))
    if doc.get("format") != SAMPLE_FORMAT:
        raise ValueError(f"unexpected sample format {doc.get('format')!r}")
    return [SampledClaim(**c) for c in doc["claims"]]


def write_verdicts(path: Path | str, records: Sequence[VerdictRecord]) -> None:
    atomic_write_text(
        Path(path),
        dumps_pretty({"format": VERDICTS_FORMAT, "verdicts": [r.to_dict() for r in records]}),
    )


def read_verdicts(path: Path | str) -> list[VerdictRecord]:
    doc = read_json(Path(path))
    if doc.get("format") != VERDICTS_FORMAT:
        raise ValueError(f"unexpected verdicts format {doc.get('format')!r}")
    return [VerdictRecord.from_dict(r) for r in doc["verdicts"]]
