"""Canonical JSON encoding, hashing, and atomic file writes.

Every persisted file in a run directory is deterministic: same inputs,
same bytes. All serialization funnels through the two dump helpers here
so that hashing and on-disk formats never drift apart.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any


def dumps_compact(obj: Any) -> str:
    """Single-line canonical JSON; the hashing form."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def dumps_pretty(obj: Any) -> str:
    """Indented canonical JSON for on-disk files, trailing newline included."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n"


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def content_digest(obj: Any) -> str:
    """Hex digest of an object's compact canonical encoding."""
    return sha256_text(dumps_compact(obj))


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a sibling temp file + rename so readers never see partial content."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def read_json(path: Path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
