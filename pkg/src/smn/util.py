"""Small shared helpers for exact cardinalities and deterministic ranking."""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def ceil_ratio(ratio: float, count: int) -> int:
    """ceil(ratio * count) using the ratio's decimal meaning exactly.

    Going through Fraction(str(ratio)) avoids float artifacts such as
    0.7 * 10 rounding a hair above 7 and ceiling to 8.
    """
    return int(math.ceil(Fraction(str(float(ratio))) * count))


def top_indices(values: np.ndarray, m: int) -> np.ndarray:
    """Indices of the m largest values, ties broken by lower index first.

    Returned ascending for determinism.
    """
    values = np.asarray(values).reshape(-1)
    order = np.argsort(-values, kind="stable")
    return np.sort(order[:m])
