"""Determinants, multi-row/column minors and the permuted minor product identity.

Two arithmetic modes are supported.  ``"exact"`` keeps every entry as a
:class:`fractions.Fraction` and never rounds; determinants use fraction-free
(Bareiss) elimination.  ``"float"`` stores a numpy array (real or complex) and
uses LAPACK's LU factorisation through :func:`numpy.linalg.det`.

Indices in a :class:`MinorSpec` are 1-based, as in the usual minor notation
``D^{a_1..a_l}_{b_1..b_l}``.  Deleting every row and column yields 1.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .errors import ComplexityError, InvalidSpecError

__all__ = [
    "SquareMatrix",
    "MinorSpec",
    "IdentityReport",
    "MAX_PERMUTATION_ORDER",
    "det",
    "multi_minor",
    "cofactor_matrix",
    "perm_minor_sum",
    "verify_minor_identity",
    "permutation_sign",
]

Scalar = Union[Fraction, float, complex]

MAX_PERMUTATION_ORDER = 8
FLOAT_REL_TOL = 1e-9


def _as_fraction(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, (int, np.integer)):
        return Fraction(int(v))
    if isinstance(v, str):
        return Fraction(v)
    if isinstance(v, (float, np.floating)):
        if not np.isfinite(v):
            raise ValueError("exact matrices need finite entries")
        return Fraction(float(v))
    raise TypeError(f"cannot convert {type(v).__name__} to an exact rational")


@dataclass(frozen=True, eq=False)
class SquareMatrix:
    """Square matrix in exact-rational or float64 mode.

    Build instances with :meth:`exact` or :meth:`floating`.
    """

    entries: Union[tuple, np.ndarray] = field(repr=False)
    mode: str = "exact"

    def __post_init__(self):
        if self.mode not in ("exact", "float"):
            raise ValueError(f"unknown mode {self.mode!r}")
        n = len(self.entries)
        if n < 1:
            raise ValueError("matrix dimension must be at least 1")
        if any(len(row) != n for row in self.entries):
            raise ValueError("matrix is not square")
        if self.mode == "float" and not np.all(np.isfinite(self.entries)):
            raise ValueError("float matrices need finite entries")

    @classmethod
    def exact(cls, rows: Sequence[Sequence]) -> "SquareMatrix":
        return cls(tuple(tuple(_as_fraction(v) for v in row) for row in rows), "exact")

    @classmethod
    def floating(cls, rows) -> "SquareMatrix":
        arr = np.array(rows)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(float)
        if arr.ndim != 2:
            raise ValueError("matrix must be two-dimensional")
        arr.setflags(write=False)
        return cls(arr, "float")

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def is_exact(self) -> bool:
        return self.mode == "exact"

    def __getitem__(self, ij):
        i, j = ij
        return self.entries[i][j]

    def to_numpy(self) -> np.ndarray:
        if self.is_exact:
            return np.array([[float(v) for v in row] for row in self.entries])
        return np.array(self.entries)

    def rows(self) -> list:
        return [list(row) for row in self.entries]

    def submatrix(self, drop_rows: Sequence[int], drop_cols: Sequence[int]):
        """Rows/columns left after deleting 0-based ``drop_rows``/``drop_cols``."""
        keep_r = [i for i in range(self.n) if i not in set(drop_rows)]
        keep_c = [j for j in range(self.n) if j not in set(drop_cols)]
        if self.is_exact:
            return [[self.entries[i][j] for j in keep_c] for i in keep_r]
        return np.asarray(self.entries)[np.ix_(keep_r, keep_c)]

    @cached_property
    def single_minors(self) -> list:
        """Table ``t[i][j]`` of the (unsigned) minor with row i, column j removed (0-based)."""
        return [[_det_raw(self.submatrix([i], [j]), self.mode) for j in range(self.n)]
                for i in range(self.n)]

    @cached_property
    def determinant(self) -> Scalar:
        return _det_raw(self.entries, self.mode)

    def __eq__(self, other):
        if not isinstance(other, SquareMatrix) or other.mode != self.mode:
            return NotImplemented
        if self.is_exact:
            return self.entries == other.entries
        return np.array_equal(self.entries, other.entries)

    __hash__ = None


@dataclass(frozen=True)
class MinorSpec:
    """Rows ``alphas`` and columns ``betas`` (1-based) to delete.

    Indices within each list must be distinct.  Most operations accept any
    order; :func:`verify_minor_identity` additionally requires both lists to
    be strictly ascending.
    """

    alphas: tuple = ()
    betas: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(int(a) for a in self.alphas))
        object.__setattr__(self, "betas", tuple(int(b) for b in self.betas))
        if len(self.alphas) != len(self.betas):
            raise InvalidSpecError("alphas and betas must have the same length")
        for name, idx in (("alphas", self.alphas), ("betas", self.betas)):
            if len(set(idx)) != len(idx):
                raise InvalidSpecError(f"repeated index in {name}: {idx}")

    @property
    def length(self) -> int:
        return len(self.alphas)

    @property
    def is_ascending(self) -> bool:
        return all(a < b for a, b in zip(self.alphas, self.alphas[1:])) and all(
            a < b for a, b in zip(self.betas, self.betas[1:])
        )

    def check(self, n: int) -> None:
        if self.length > n:
            raise InvalidSpecError(f"cannot delete {self.length} rows from a {n}x{n} matrix")
        for idx in self.alphas + self.betas:
            if not 1 <= idx <= n:
                raise InvalidSpecError(f"index {idx} outside [1, {n}]")


@dataclass(frozen=True)
class IdentityReport:
    lhs: Scalar
    rhs: Scalar
    passed: bool
    error: float
    mode: str


def _bareiss(rows: list) -> Fraction:
    n = len(rows)
    if n == 0:
        return Fraction(1)
    a = [list(r) for r in rows]
    integral = all(v.denominator == 1 for r in a for v in r)
    if integral:
        a = [[v.numerator for v in r] for r in a]
    sign = 1
    prev = 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for i in range(k + 1, n):
                if a[i][k] != 0:
                    a[k], a[i] = a[i], a[k]
                    sign = -sign
                    break
            else:
                return Fraction(0)
        akk = a[k][k]
        rk = a[k]
        for i in range(k + 1, n):
            ri = a[i]
            aik = ri[k]
            for j in range(k + 1, n):
                num = ri[j] * akk - aik * rk[j]
                ri[j] = num // prev if integral else num / prev
        prev = akk
    return Fraction(sign * a[n - 1][n - 1])


def _det_raw(rows, mode: str) -> Scalar:
    if mode == "exact":
        return _bareiss(list(rows))
    arr = np.asarray(rows)
    if arr.size == 0:
        return 1.0
    return np.linalg.det(arr).item()


def det(M: SquareMatrix) -> Scalar:
    """Determinant: exact rational in exact mode, LU-based in float mode."""
    return M.determinant


def multi_minor(M: SquareMatrix, spec: MinorSpec) -> Scalar:
    """Determinant of ``M`` with the rows ``spec.alphas`` and columns ``spec.betas`` removed."""
    spec.check(M.n)
    if spec.length == 1:
        return M.single_minors[spec.alphas[0] - 1][spec.betas[0] - 1]
    sub = M.submatrix([a - 1 for a in spec.alphas], [b - 1 for b in spec.betas])
    return _det_raw(sub, M.mode)


def cofactor_matrix(M: SquareMatrix) -> SquareMatrix:
    """Signed cofactors ``C[i][j] = (-1)^(i+j) * minor(i, j)``."""
    t = M.single_minors
    rows = [[t[i][j] if (i + j) % 2 == 0 else -t[i][j] for j in range(M.n)] for i in range(M.n)]
    if M.is_exact:
        return SquareMatrix(tuple(tuple(r) for r in rows), "exact")
    return SquareMatrix.floating(rows)


def permutation_sign(perm: Sequence[int]) -> int:
    """Sign of a permutation given as a sequence of distinct comparable items."""
    inversions = sum(
        1 for i in range(len(perm)) for j in range(i + 1, len(perm)) if perm[i] > perm[j]
    )
    return -1 if inversions % 2 else 1


def perm_minor_sum(M: SquareMatrix, spec: MinorSpec) -> Scalar:
    r"""Brute-force :math:`\sum_s \mathrm{sgn}(s) \prod_i D^{\alpha_{s(i)}}_{\beta_i}`.

    Enumerates all ``l!`` permutations, so ``l`` is capped at
    :data:`MAX_PERMUTATION_ORDER`.
    """
    spec.check(M.n)
    l = spec.length
    if l < 1:
        raise InvalidSpecError("need at least one row/column pair")
    if l > MAX_PERMUTATION_ORDER:
        raise ComplexityError(f"l = {l} exceeds the brute-force limit {MAX_PERMUTATION_ORDER}")
    t = M.single_minors
    rows = [a - 1 for a in spec.alphas]
    cols = [b - 1 for b in spec.betas]
    total = Fraction(0) if M.is_exact else 0.0
    for perm in itertools.permutations(range(l)):
        term = Fraction(1) if M.is_exact else 1.0
        for i, s_i in enumerate(perm):
            term *= t[rows[s_i]][cols[i]]
            if term == 0:
                break
        else:
            total += term if permutation_sign(perm) > 0 else -term
    return total


def verify_minor_identity(M: SquareMatrix, spec: MinorSpec) -> IdentityReport:
    """Compare the permuted product of single minors with ``det(M)^(l-1) * minor``.

    Exact mode demands equality; float mode accepts a relative error up to
    ``1e-9``.
    """
    if not spec.is_ascending:
        raise InvalidSpecError("identity check needs strictly ascending indices")
    lhs = perm_minor_sum(M, spec)
    rhs = det(M) ** (spec.length - 1) * multi_minor(M, spec)
    if M.is_exact:
        passed = lhs == rhs
        scale = max(abs(lhs), abs(rhs))
        error = float(abs(lhs - rhs) / scale) if scale else 0.0
    else:
        scale = max(abs(lhs), abs(rhs))
        error = float(abs(lhs - rhs) / scale) if scale else 0.0
        passed = error <= FLOAT_REL_TOL
    return IdentityReport(lhs=lhs, rhs=rhs, passed=passed, error=error, mode=M.mode)
