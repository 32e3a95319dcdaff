"""Length-prefixed JSON framing: 4-byte big-endian size, then UTF-8 JSON.

The same codec talks upstream (worker stdio) and downstream (the cell
child's pipes). A frame that decodes to garbage is recoverable: its
bytes were fully consumed, so the stream stays aligned. A truncated or
oversized frame is not, and the connection has to go.
"""

from __future__ import annotations

import json
import os
import selectors
import struct
import time
from typing import Any, BinaryIO

MAX_FRAME_BYTES = 16 * 1024 * 1024
_HEADER = struct.Struct(">I")


class FrameError(Exception):
    def __init__(self, message: str, recoverable: bool) -> None:
        super().__init__(message)
        self.recoverable = recoverable


def write_frame(stream: BinaryIO, message: dict[str, Any]) -> None:
    data = json.dumps(message, sort_keys=True, separators=(",", ":")).encode("utf-8")
    if len(data) > MAX_FRAME_BYTES:
        raise FrameError(f"frame of {len(data)} bytes exceeds the cap", recoverable=True)
    stream.write(_HEADER.pack(len(data)) + data)
    stream.flush()


def _parse_body(body: bytes) -> dict[str, Any]:
    try:
        message = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise FrameError(f"frame body is not JSON: {exc}", recoverable=True) from exc
    if not isinstance(message, dict):
        raise FrameError("frame body must be a JSON object", recoverable=True)
    return message


def read_frame(stream: BinaryIO) -> dict[str, Any] | None:
    """One frame from a blocking stream; None on clean EOF."""
    header = stream.read(_HEADER.size)
    if not header:
        return None
    if len(header) < _HEADER.size:
        raise FrameError("truncated frame header", recoverable=False)
    (length,) = _HEADER.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise FrameError(f"declared frame of {length} bytes exceeds the cap", recoverable=False)
    chunks: list[bytes] = []
    remaining = length
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise FrameError("truncated frame body", recoverable=False)
        chunks.append(chunk)
        remaining -= len(chunk)
    return _parse_body(b"".join(chunks))


def read_frame_deadline(
    fd: int, deadline: float | None
) -> tuple[str, dict[str, Any] | None]:
    """One frame from a pipe fd under an absolute monotonic deadline.

    Returns ("frame", message), ("eof", None), or ("timeout", None).
    Only raw os.read touches the fd, so the caller must never mix in
    buffered reads. A partial frame at timeout is fine: the caller kills
    the peer, never reads the fd again.
    """
    sel = selectors.DefaultSelector()
    sel.register(fd, selectors.EVENT_READ)
    buf = bytearray()
    length: int | None = None
    try:
        while True:
            if length is None and len(buf) >= _HEADER.size:
                (length,) = _HEADER.unpack(buf[: _HEADER.size])
                if length > MAX_FRAME_BYTES:
                    raise FrameError(
                        f"declared frame of {length} bytes exceeds the cap", recoverable=False
                    )
            if length is not None and len(buf) >= _HEADER.size + length:
                body = bytes(buf[_HEADER.size : _HEADER.size + length])
                return ("frame", _parse_body(body))
            timeout = None
            if deadline is not None:
                timeout = deadline - time.monotonic()
                if timeout <= 0:
                    return ("timeout", None)
            if not sel.select(timeout):
                return ("timeout", None)
            chunk = os.read(fd, 65536)
            if not chunk:
                return ("eof", None)
            buf.extend(chunk)
    finally:
        sel.close()
