"""Writer for the `.semb` text embedding format.

Layout: a header line `semb/1 dim=F`, then one `key<TAB>v1 .. vF` row
per entry. Values are stored as the repr of their float32 rounding, so
a parse followed by a rewrite reproduces the file byte for byte.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

SEMB_TAG = "semb/1"


class ExtractorError(ValueError):
    """Bad input, configuration or encoder output; the message says which."""


def write_semb(path, dim: int, rows) -> int:
    """Write (key, vector) rows; returns the number of rows written."""
    if dim < 1:
        raise ExtractorError(f"dim must be positive, got {dim}")
    path = Path(path)
    seen: set[str] = set()
    written = 0
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{SEMB_TAG} dim={dim}\n")
        for key, vec in rows:
            if not key or "\t" in key or "\n" in key:
                raise ExtractorError(f"key {key!r} is empty or contains tab/newline")
            if key in seen:
                raise ExtractorError(f"duplicate key {key!r}")
            seen.add(key)
            vec = np.asarray(vec, dtype=np.float64).reshape(-1)
            if vec.shape != (dim,):
                raise ExtractorError(
                    f"row {key!r} has {vec.size} values, expected dim={dim}")
            if not np.all(np.isfinite(vec)):
                raise ExtractorError(f"row {key!r} contains non-finite values")
            text = " ".join(repr(float(np.float32(v))) for v in vec)
            fh.write(f"{key}\t{text}\n")
            written += 1
    return written
