"""Unit-step quantizer and the geometric zoom schedule.

The quantizer maps a real (here: exact rational) value to the integer whose
centered unit cell contains it.  The nonnegative branch sends
[(2k-1)/2, (2k+1)/2) to k; at and below -1/2 the value is folded through odd
symmetry, so -1/2 itself maps to -1 (not 0).  Either way the error never
exceeds one half.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .exactmath import frac

__all__ = ["quantize_scalar", "quantize_vector", "ZoomSchedule", "zoom_at"]

_HALF = Fraction(1, 2)


def quantize_scalar(x) -> int:
    """Quantize one value to the nearest integer, half-step rounding up.

    Exact over rationals: quantize_scalar(Fraction(1, 2)) == 1 and
    quantize_scalar(Fraction(-1, 2)) == -1.
    """
    x = frac(x)
    if x > -_HALF:
        return math.floor(x + _HALF)
    return -quantize_scalar(-x)


def quantize_vector(vec: np.ndarray) -> np.ndarray:
    out = np.empty(len(vec), dtype=object)
    for i, v in enumerate(vec):
        out[i] = quantize_scalar(v)
    return out


@dataclass(frozen=True)
class ZoomSchedule:
    """Geometric scaling sequence l(k) = l0 * gamma^k shared by all parties.

    gamma must lie strictly inside (0, 1) and l0 must be positive; both are
    exact rationals so every party derives bit-identical scale factors from
    the step index alone.
    """

    gamma: Fraction
    l0: Fraction

    def __post_init__(self):
        gamma = frac(self.gamma)
        l0 = frac(self.l0)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "l0", l0)
        if not (0 < gamma < 1):
            raise ValueError(f"gamma must be in (0, 1), got {gamma}")
        if l0 <= 0:
            raise ValueError(f"l0 must be positive, got {l0}")

    def at(self, k: int) -> Fraction:
        """l(k), defined for negative k as well (the schedule extends both ways)."""
        return self.l0 * self.gamma**k


def zoom_at(schedule: ZoomSchedule, k: int) -> Fraction:
    return schedule.at(k)
