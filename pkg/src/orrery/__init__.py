"""Autonomous discovery loops over a versioned world model.

The package couples a planning/execution engine to pluggable language,
search, and code-execution backends, and keeps every claim it reports
traceable to a notebook cell or a literature citation.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .backends import (
    BackendSuite,
    ExecutionResult,
    ScriptProfile,
    ScriptedClock,
    SystemClock,
    build_scripted_suite,
)
from .engine import DiscoveryRun, RunBudget, RunConfig, RunResult
from .errors import OrreryError, ProvenanceIncomplete
from .evalharness import (
    SampledClaim,
    Verdict,
    VerdictRecord,
    findings_curve,
    sample_statements,
    score_accuracy,
)
from .metrics import ExpertTimeParams, RunMetrics, compute_run_metrics
from .provenance import Citation, EdgeKind, ProvenanceEdge
from .report import DiscoveryReport, render_report, validate_report
from .storage import RunStorage, tree_snapshot
from .wire import WorkerExecutor, WorkerLimits
from .workerproto import assert_conformance, run_conformance
from .worldmodel import (
    EntryDraft,
    EntryKind,
    EntryStatus,
    Selector,
    WorldModelEntry,
    WorldModelStore,
)

__all__ = [
    "BackendSuite",
    "Citation",
    "DiscoveryReport",
    "DiscoveryRun",
    "EdgeKind",
    "EntryDraft",
    "EntryKind",
    "EntryStatus",
    "ExecutionResult",
    "ExpertTimeParams",
    "OrreryError",
    "ProvenanceEdge",
    "ProvenanceIncomplete",
    "RunBudget",
    "RunConfig",
    "RunMetrics",
    "RunResult",
    "RunStorage",
    "SampledClaim",
    "ScriptProfile",
    "ScriptedClock",
    "Selector",
    "SystemClock",
    "Verdict",
    "VerdictRecord",
    "WorkerExecutor",
    "WorkerLimits",
    "WorldModelEntry",
    "WorldModelStore",
    "__version__",
    "assert_conformance",
    "build_scripted_suite",
    "compute_run_metrics",
    "findings_curve",
    "render_report",
    "run_conformance",
    "sample_statements",
    "score_accuracy",
    "tree_snapshot",
    "validate_report",
]
