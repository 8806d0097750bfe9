"""Exact rational and integer linear algebra helpers.

Everything in this package that affects control-loop correctness is computed
over ``fractions.Fraction`` (kept in lowest terms with positive denominator by
the stdlib) or arbitrary-precision ``int``.  Matrices and vectors are numpy
arrays with ``dtype=object`` so that ``@``, ``+`` and scalar multiplication
stay exact.  Floating point appears only in clearly-labeled estimates
(spectral radii) and in plot/summary columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "NoSolutionError",
    "NonUniqueSolutionError",
    "NonIntegralError",
    "CharPoly",
    "frac",
    "rational_matrix",
    "rational_vector",
    "integer_matrix",
    "integer_vector",
    "identity",
    "zeros",
    "to_float",
    "inf_norm",
    "is_integral",
    "to_integer_array",
    "solve_linear_exact",
    "invert_matrix",
    "char_poly_coeffs",
    "centered_lift",
    "centered_lift_vector",
    "mod_reduce",
    "sqrt_upper_bound",
    "two_norm_upper_bound",
    "power_sup_norm",
    "spectral_radius_estimate",
    "fraction_to_str",
]


class NoSolutionError(ValueError):
    """The linear system is inconsistent."""


class NonUniqueSolutionError(ValueError):
    """The linear system is rank deficient but consistent.

    ``particular`` holds one exact solution chosen by the elimination's
    pivoting (free variables set to zero).
    """

    def __init__(self, message: str, particular: np.ndarray):
        super().__init__(message)
        self.particular = particular


class NonIntegralError(ValueError):
    """A matrix expected to be integral has non-integer entries.

    ``entries`` lists ``(name, row, col, value)`` for every offender.
    """

    def __init__(self, entries: list[tuple[str, int, int, Fraction]]):
        listed = "; ".join(
            f"{name}[{r},{c}] = {fraction_to_str(v)}" for name, r, c, v in entries
        )
        super().__init__(f"non-integer entries: {listed}")
        self.entries = entries


def frac(value) -> Fraction:
    """Parse a value into an exact Fraction.

    Accepts Fraction, int, strings like ``"3"``, ``"-7/2"`` or ``"0.1"``
    (finite decimals are exact), and floats.  Floats go through their
    shortest-repr decimal form, so a JSON ``0.1`` means one tenth rather
    than the binary double closest to it.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError(f"cannot interpret {value!r} as a rational")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    if isinstance(value, str):
        return Fraction(value)
    raise TypeError(f"cannot interpret {value!r} as a rational")


def fraction_to_str(x: Fraction) -> str:
    """Render ``p/q`` (just ``p`` when the denominator is one)."""
    x = Fraction(x)
    if x.denominator == 1:
        return str(x.numerator)
    return f"{x.numerator}/{x.denominator}"


def rational_matrix(rows: Sequence[Sequence]) -> np.ndarray:
    """Build a 2-D object array of Fractions, validating rectangularity."""
    parsed = [[frac(v) for v in row] for row in rows]
    if not parsed:
        raise ValueError("empty matrix")
    width = len(parsed[0])
    if width == 0 or any(len(row) != width for row in parsed):
        raise ValueError("matrix rows have inconsistent lengths")
    out = np.empty((len(parsed), width), dtype=object)
    for i, row in enumerate(parsed):
        for j, v in enumerate(row):
            out[i, j] = v
    return out


def rational_vector(entries: Iterable) -> np.ndarray:
    vals = [frac(v) for v in entries]
    out = np.empty(len(vals), dtype=object)
    for i, v in enumerate(vals):
        out[i] = v
    return out


def integer_matrix(rows: Sequence[Sequence[int]]) -> np.ndarray:
    return to_integer_array(rational_matrix(rows), "matrix")


def integer_vector(entries: Iterable[int]) -> np.ndarray:
    return to_integer_array(rational_vector(entries), "vector")


def identity(n: int) -> np.ndarray:
    out = zeros(n, n)
    for i in range(n):
        out[i, i] = Fraction(1)
    return out


def zeros(rows: int, cols: int | None = None) -> np.ndarray:
    shape = (rows,) if cols is None else (rows, cols)
    out = np.empty(shape, dtype=object)
    out[...] = Fraction(0)
    return out


def to_float(arr: np.ndarray) -> np.ndarray:
    return np.array([[float(v) for v in row] for row in arr], dtype=float) \
        if arr.ndim == 2 else np.array([float(v) for v in arr], dtype=float)


def inf_norm(arr: np.ndarray):
    """Exact infinity norm: max |entry| for vectors, max row sum for matrices."""
    if arr.ndim == 1:
        return max((abs(Fraction(v)) for v in arr), default=Fraction(0))
    return max(
        (sum(abs(Fraction(v)) for v in row) for row in arr), default=Fraction(0)
    )


def is_integral(arr: np.ndarray) -> bool:
    return all(Fraction(v).denominator == 1 for v in arr.flat)


def to_integer_array(arr: np.ndarray, name: str) -> np.ndarray:
    """Convert exactly to Python ints, raising NonIntegralError with offenders."""
    offenders = []
    out = np.empty(arr.shape, dtype=object)
    it = np.ndindex(arr.shape)
    for idx in it:
        v = Fraction(arr[idx])
        if v.denominator != 1:
            pos = idx if len(idx) == 2 else (idx[0], 0)
            offenders.append((name, pos[0], pos[1], v))
        else:
            out[idx] = v.numerator
    if offenders:
        raise NonIntegralError(offenders)
    return out


def solve_linear_exact(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``mat @ x == rhs`` exactly by fraction-free-style Gauss elimination.

    Raises NoSolutionError on inconsistency.  On a consistent rank-deficient
    system raises NonUniqueSolutionError carrying one particular solution
    (free variables pinned to zero).
    """
    m, n = mat.shape
    if rhs.shape != (m,):
        raise ValueError(f"rhs has shape {rhs.shape}, expected ({m},)")
    aug = np.empty((m, n + 1), dtype=object)
    for i in range(m):
        for j in range(n):
            aug[i, j] = Fraction(mat[i, j])
        aug[i, n] = Fraction(rhs[i])

    pivot_cols = []
    row = 0
    for col in range(n):
        pivot = None
        for r in range(row, m):
            if aug[r, col] != 0:
                pivot = r
                break
        if pivot is None:
            continue
        if pivot != row:
            aug[[row, pivot]] = aug[[pivot, row]]
        pv = aug[row, col]
        aug[row, col:] = [v / pv for v in aug[row, col:]]
        for r in range(m):
            if r != row and aug[r, col] != 0:
                factor = aug[r, col]
                aug[r, col:] = [
                    a - factor * b for a, b in zip(aug[r, col:], aug[row, col:])
                ]
        pivot_cols.append(col)
        row += 1
        if row == m:
            break

    for r in range(row, m):
        if aug[r, n] != 0:
            raise NoSolutionError("inconsistent linear system")

    x = zeros(n)
    for r, col in enumerate(pivot_cols):
        x[col] = aug[r, n]
    if len(pivot_cols) < n:
        raise NonUniqueSolutionError(
            f"rank {len(pivot_cols)} < {n} unknowns; returning a particular solution",
            particular=x,
        )
    return x


def invert_matrix(mat: np.ndarray) -> np.ndarray:
    """Exact inverse of a square rational matrix, or NoSolutionError if singular."""
    n = mat.shape[0]
    if mat.shape != (n, n):
        raise ValueError("matrix is not square")
    cols = []
    for j in range(n):
        e = zeros(n)
        e[j] = Fraction(1)
        try:
            cols.append(solve_linear_exact(mat, e))
        except NonUniqueSolutionError as exc:
            raise NoSolutionError("matrix is singular") from exc
    out = np.empty((n, n), dtype=object)
    for j, col in enumerate(cols):
        for i in range(n):
            out[i, j] = col[i]
    return out


@dataclass(frozen=True)
class CharPoly:
    """Monic characteristic polynomial lambda^d + c[0] lambda^(d-1) + ... + c[d-1].

    ``coeffs`` is ordered from the lambda^(d-1) coefficient down to the
    constant term, matching how the restoration sums weight the most recent
    history entry first.
    """

    degree: int
    coeffs: tuple[Fraction, ...]

    @property
    def coeffs_ext(self) -> tuple[Fraction, ...]:
        """Leading 1 prepended: weights for a (degree+1)-long window."""
        return (Fraction(1),) + self.coeffs


def _trace(mat: np.ndarray) -> Fraction:
    return sum((Fraction(mat[i, i]) for i in range(mat.shape[0])), Fraction(0))


def char_poly_coeffs(mat: np.ndarray) -> CharPoly:
    """Characteristic polynomial by the Faddeev-LeVerrier recurrence, exact.

    The Cayley-Hamilton residual is evaluated and must vanish; this is a
    self-check of the exact arithmetic, not an input validation.
    """
    d = mat.shape[0]
    if mat.shape != (d, d):
        raise ValueError("matrix is not square")
    work = rational_matrix([[mat[i, j] for j in range(d)] for i in range(d)])
    ident = identity(d)
    coeffs: list[Fraction] = []
    mk = work
    for k in range(1, d + 1):
        if k > 1:
            mk = work @ (mk + coeffs[-1] * ident)
        coeffs.append(-_trace(mk) / k)

    residual = identity(d)
    for c in coeffs:
        residual = residual @ work + c * ident
    if any(v != 0 for v in residual.flat):
        raise RuntimeError("Cayley-Hamilton residual is nonzero (internal error)")
    return CharPoly(degree=d, coeffs=tuple(coeffs))


def centered_lift(m: int, q: int) -> int:
    """Map a residue to its representative in [-q/2, q/2).

    Works for any modulus >= 2; the computation floor((2m + q) / 2q) stays in
    integers so odd moduli are exact too.
    """
    if q < 2:
        raise ValueError("modulus must be >= 2")
    return m - ((2 * m + q) // (2 * q)) * q


def centered_lift_vector(vec: np.ndarray, q: int) -> np.ndarray:
    out = np.empty(vec.shape, dtype=object)
    for i, v in enumerate(vec):
        out[i] = centered_lift(int(v), q)
    return out


def mod_reduce(arr: np.ndarray, q: int) -> np.ndarray:
    """Reduce an integer array elementwise into [0, q)."""
    out = np.empty(arr.shape, dtype=object)
    for idx in np.ndindex(arr.shape):
        out[idx] = int(arr[idx]) % q
    return out


def sqrt_upper_bound(x, digits: int = 12) -> Fraction:
    """A rational upper bound on sqrt(x), tight to about 10^-digits relative."""
    x = Fraction(x)
    if x < 0:
        raise ValueError("negative operand")
    if x == 0:
        return Fraction(0)
    scale = 10**digits
    scaled = x * scale * scale
    n = -((-scaled.numerator) // scaled.denominator)  # ceil
    r = math.isqrt(n)
    if r * r < n:
        r += 1
    return Fraction(r, scale)


def _is_diagonal(mat: np.ndarray) -> bool:
    n, m = mat.shape
    return n == m and all(
        mat[i, j] == 0 for i in range(n) for j in range(m) if i != j
    )


def two_norm_upper_bound(mat: np.ndarray) -> Fraction:
    """Rational upper bound on the induced 2-norm.

    Exact for diagonal matrices (max |diagonal entry|); otherwise
    sqrt(rows) * inf_norm, which over-estimates by at most sqrt(rows).
    """
    if mat.ndim == 1:
        sq = sum((Fraction(v) ** 2 for v in mat), Fraction(0))
        return sqrt_upper_bound(sq)
    if _is_diagonal(mat):
        return max(
            (abs(Fraction(mat[i, i])) for i in range(mat.shape[0])),
            default=Fraction(0),
        )
    return sqrt_upper_bound(mat.shape[0]) * inf_norm(mat)


def power_sup_norm(mat: np.ndarray, horizon: int) -> tuple[Fraction, float]:
    """Sup over k in [0, horizon] of a 2-norm upper bound of mat^k.

    Returns the exact rational sup together with a floating spectral-radius
    estimate of ``mat`` (whose accuracy is whatever the underlying eigenvalue
    solver delivers; fine for the small well-conditioned matrices used here).
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    n = mat.shape[0]
    power = identity(n)
    sup = two_norm_upper_bound(power)
    for _ in range(horizon):
        power = power @ mat
        sup = max(sup, two_norm_upper_bound(power))
    return sup, spectral_radius_estimate(mat)


def spectral_radius_estimate(mat: np.ndarray) -> float:
    if mat.size == 0:
        return 0.0
    eigs = np.linalg.eigvals(to_float(mat))
    return float(max(abs(eigs)))
