"""The worker must pass the client-side conformance suite verbatim."""

from __future__ import annotations

import sys

from orrery.workerproto import assert_conformance

WORKER = [sys.executable, "-m", "orrery_worker"]


def test_worker_passes_conformance():
    assert_conformance(WORKER)
