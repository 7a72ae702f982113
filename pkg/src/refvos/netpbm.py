"""Minimal binary netpbm IO: PPM (P6) frames and PGM (P5) activation dumps.

Readers validate headers and payload sizes and report the byte offset at
which a file stops making sense.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ArchiveError


def _read_header(data: bytes, magic: bytes, path):
    """Parse ``magic w h maxval`` allowing arbitrary whitespace. Returns
    (width, height, payload_offset)."""
    if not data.startswith(magic):
        raise ArchiveError(f"expected {magic.decode()} magic", path=path, offset=0)
    fields = []
    pos = len(magic)
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ArchiveError("truncated header", path=path, offset=pos)
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            raise ArchiveError("non-numeric header field", path=path, offset=start) from None
    if pos >= len(data):
        raise ArchiveError("missing payload", path=path, offset=pos)
    pos += 1  # single whitespace byte terminates the header
    width, height, maxval = fields
    if maxval != 255:
        raise ArchiveError(f"unsupported maxval {maxval}", path=path, offset=len(magic))
    if width <= 0 or height <= 0:
        raise ArchiveError("non-positive image size", path=path, offset=len(magic))
    return width, height, pos


def write_ppm(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as binary P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8, got {image.shape} {image.dtype}")
    height, width = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    width, height, pos = _read_header(data, b"P6", path)
    expected = width * height * 3
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise ArchiveError(
            f"payload truncated ({len(payload)} of {expected} bytes)",
            path=path,
            offset=pos + len(payload),
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def write_pgm(path, image: np.ndarray) -> None:
    """Write an (H, W) uint8 array as binary P5."""
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError(f"expected (H, W) uint8, got {image.shape} {image.dtype}")
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    width, height, pos = _read_header(data, b"P5", path)
    expected = width * height
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise ArchiveError(
            f"payload truncated ({len(payload)} of {expected} bytes)",
            path=path,
            offset=pos + len(payload),
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()
