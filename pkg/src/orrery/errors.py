"""Exception hierarchy shared across the framework."""

from __future__ import annotations


class OrreryError(Exception):
    """Base class for all framework errors."""


# --- store / persistence -------------------------------------------------

class IoFailure(OrreryError):
    """An underlying filesystem operation failed."""


class CorruptStore(OrreryError):
    """A persisted store is missing, truncated, or fails checksum verification."""


# --- world model ---------------------------------------------------------

class MalformedEntry(OrreryError):
    """Entry draft violates the schema (empty statement, missing provenance, ...)."""


class UnknownEntry(OrreryError):
    """Referenced entry id does not exist in the version."""


class AlreadySuperseded(OrreryError):
    """Attempt to supersede an entry that is no longer active."""


class InvalidBudget(OrreryError):
    """A budget value is out of range."""


# --- planning / engine ---------------------------------------------------

class PlanEmpty(OrreryError):
    """Planner proposed zero tasks without signalling completion."""


class MalformedPlan(OrreryError):
    """Planner output could not be parsed into tasks."""


class BackendFailure(OrreryError):
    """A model/search/executor backend failed or returned garbage."""


class RuntimeUnavailable(OrreryError):
    """No agent runtime registered for a task kind."""


class AlreadyTerminated(OrreryError):
    """Resume requested on a run that already terminated."""


class UnknownCycle(OrreryError):
    """Cycle index outside the completed range."""


# --- agent runtime -------------------------------------------------------

class DatasetMissing(OrreryError):
    """A dataset file named by the manifest does not exist."""


class ExecutorUnavailable(OrreryError):
    """Cell execution backend is missing or unreachable."""


class SearchUnavailable(OrreryError):
    """Document search backend is missing or unreachable."""


class VariantMismatch(OrreryError):
    """Operation applied to the wrong trajectory variant."""


# --- reports -------------------------------------------------------------

class ProvenanceIncomplete(OrreryError):
    """Synthesis produced a claim with no resolvable evidence; the report is rejected."""

    def __init__(self, claim_id: str, detail: str = ""):
        self.claim_id = claim_id
        msg = f"claim {claim_id} has no resolvable evidence"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class NoEdges(OrreryError):
    """Classification requested for a claim with no evidence edges."""


class UnvalidatedReport(OrreryError):
    """Render requested before the report passed provenance validation."""


# --- evaluation harness --------------------------------------------------

class SampleTooLarge(OrreryError):
    """Requested sample size exceeds the claim population."""


class UnknownClaim(OrreryError):
    """Verdict references a claim id absent from the corpus."""


class EmptySeries(OrreryError):
    """Curve fitting requested on an empty series."""


# --- CLI -----------------------------------------------------------------

class ConfigInvalid(OrreryError):
    """Run config failed to parse or validate."""


class DatasetTooLarge(OrreryError):
    """Dataset manifest total exceeds the configured size cap."""


# --- wire protocol -------------------------------------------------------

class ProtocolError(OrreryError):
    """Malformed frame or message on a backend/worker connection."""
