"""Small shared helpers: atomic file writes and keyed RNG streams."""

from __future__ import annotations

import os
import tempfile

import numpy as np

# Domain tags keeping independent Philox streams disjoint under one user seed.
STREAM_DIRECTIONS = 0
STREAM_SPLIT = 1
STREAM_SHUFFLE = 2
STREAM_WEIGHT_INIT = 3
STREAM_NOVEL = 4
STREAM_BENCH = 5


def keyed_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream, index).

    Philox keys make every (cell, purpose) stream independent, so work can be
    partitioned in any order and still reproduce bit-identically.
    """
    key = [seed % 2**64, ((stream << 32) ^ index) % 2**64]
    return np.random.Generator(np.random.Philox(key=key))


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via temp file + rename so readers never see a truncated file."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=os.path.basename(path) + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
