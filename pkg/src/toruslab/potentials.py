"""Torus-invariant potentials ``phi(x, w)`` on ``R^k x C^m`` and their derivatives.

The torus coordinates ``y`` never appear: every potential is a function of the
real orbit coordinates ``x`` and the transverse complex coordinates ``w`` only.
Complex derivatives follow the Wirtinger convention

    d/dw = (d/da - i d/db) / 2,    d/dw_bar = (d/da + i d/db) / 2,    w = a + i b,

so ``hess_wwbar[i, j] = phi_{w_i wbar_j}`` and ``hess_xwbar[a, j] = phi_{x_a wbar_j}``.

All evaluation routines are vectorised: ``x`` has shape ``(..., k)`` and ``w``
has shape ``(..., m)``; leading dimensions broadcast.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConvexityError, DomainError

__all__ = [
    "Domain",
    "TorusPotential",
    "QuadraticSeparable",
    "ProjectiveModel",
    "ToricFubiniStudy",
    "DerivativeBundle",
    "MixedHessian",
    "FamilyDescriptor",
    "eval_bundle",
    "mixed_hessian",
    "builtin_catalog",
    "make_potential",
    "prepare_points",
]

_DOMAIN_SLACK = 1e-9


@dataclass(frozen=True)
class Domain:
    """Working box ``|x_i| <= x_radius``, ``|w_j| <= w_radius``."""

    x_radius: float = 6.0
    w_radius: float = 2.0

    def __post_init__(self):
        if not (self.x_radius > 0 and self.w_radius > 0):
            raise ValueError("domain radii must be positive")


@dataclass(frozen=True)
class DerivativeBundle:
    value: np.ndarray
    grad_x: np.ndarray
    hess_xx: np.ndarray
    grad_w: np.ndarray
    hess_wwbar: np.ndarray
    hess_xwbar: np.ndarray

    def __getitem__(self, idx) -> "DerivativeBundle":
        return DerivativeBundle(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))


@dataclass(frozen=True)
class MixedHessian:
    """Block matrix ``[[phi_xx, phi_xwbar], [phi_wx, phi_wwbar]]``.

    ``coupling`` is the ``k x m`` block ``phi_{x wbar}``; the lower-left block
    is its conjugate transpose since ``phi`` is real.
    """

    hess_xx: np.ndarray
    coupling: np.ndarray
    hess_wwbar: np.ndarray

    @property
    def k(self) -> int:
        return self.hess_xx.shape[-1]

    @property
    def m(self) -> int:
        return self.hess_wwbar.shape[-1]

    @property
    def coupling_adjoint(self) -> np.ndarray:
        return np.conj(np.swapaxes(self.coupling, -1, -2))

    @property
    def matrix(self) -> np.ndarray:
        top = np.concatenate([self.hess_xx.astype(complex), self.coupling], axis=-1)
        bottom = np.concatenate([self.coupling_adjoint, self.hess_wwbar], axis=-1)
        return np.concatenate([top, bottom], axis=-2)

    def determinant(self, imag_tol: float = 1e-12) -> np.ndarray:
        """Real determinant of the assembled matrix.

        Raises ``ArithmeticError`` if the imaginary residue exceeds
        ``imag_tol`` relative to the modulus.
        """
        d = np.linalg.det(self.matrix)
        resid = np.abs(d.imag) / np.maximum(np.abs(d), np.finfo(float).tiny)
        if np.any(resid > imag_tol) and np.any(np.abs(d.imag) > imag_tol):
            raise ArithmeticError(f"determinant not real (relative residue {resid.max():.2e})")
        return d.real

    def schur_complement(self) -> np.ndarray:
        """``C - B^* H^{-1} B``."""
        hinv_b = np.linalg.solve(self.hess_xx.astype(complex), self.coupling)
        return self.hess_wwbar - self.coupling_adjoint @ hinv_b


def prepare_points(k: int, m: int, x, w=None):
    """Coerce ``x``/``w`` to float/complex arrays with broadcast leading shapes."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.shape[-1] != k:
        raise ValueError(f"x must have trailing dimension {k}, got shape {x.shape}")
    if w is None:
        w = np.zeros(x.shape[:-1] + (m,), dtype=complex)
    w = np.asarray(w, dtype=complex)
    if w.ndim == 0:
        w = w[None]
    if w.shape[-1] != m:
        raise ValueError(f"w must have trailing dimension {m}, got shape {w.shape}")
    lead = np.broadcast_shapes(x.shape[:-1], w.shape[:-1])
    return np.broadcast_to(x, lead + (k,)), np.broadcast_to(w, lead + (m,))


@dataclass(frozen=True)
class TorusPotential:
    """Base class for builtin families.

    Subclasses implement ``_value``, ``_first`` (analytic ``grad_x`` and
    Wirtinger ``grad_w``) and ``_second`` (``hess_xx``, ``hess_xwbar``,
    ``hess_wwbar``).  ``offset`` adds a constant to the value only.
    """

    k: int = 1
    m: int = 0
    derivative_mode: str = "analytic"
    fd_step: float = 1e-5
    domain: Domain = field(default_factory=Domain)
    offset: float = 0.0

    family = "abstract"

    def __post_init__(self):
        if self.k < 1 or self.m < 0:
            raise ValueError("need k >= 1 and m >= 0")
        if self.derivative_mode not in ("analytic", "fd"):
            raise ValueError(f"unknown derivative mode {self.derivative_mode!r}")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")

    # -- to be provided by families -------------------------------------
    def _value(self, x, w):
        raise NotImplementedError

    def _first(self, x, w):
        raise NotImplementedError

    def _second(self, x, w):
        raise NotImplementedError

    @property
    def params(self) -> dict:
        return {}

    # -- shared machinery -----------------------------------------------
    @property
    def x_support(self) -> Optional[float]:
        """Half-width of the box carrying the orbit measure, ``None`` for all of ``R^k``."""
        return None

    def describe(self) -> dict:
        return {
            "family": self.family,
            "k": self.k,
            "m": self.m,
            "params": self.params,
            "derivative_mode": self.derivative_mode,
            "offset": self.offset,
        }

    def with_offset(self, c: float) -> "TorusPotential":
        return replace(self, offset=self.offset + c)

    def with_mode(self, mode: str, fd_step: Optional[float] = None) -> "TorusPotential":
        return replace(self, derivative_mode=mode, fd_step=fd_step or self.fd_step)

    def check_domain(self, x, w) -> None:
        R = self.domain.x_radius * (1 + _DOMAIN_SLACK) + _DOMAIN_SLACK
        if np.any(np.abs(x) > R):
            raise DomainError(f"x outside working box |x_i| <= {self.domain.x_radius}")
        if self.m and np.any(np.abs(w) > self.domain.w_radius * (1 + _DOMAIN_SLACK)):
            raise DomainError(f"w outside working disc |w_j| <= {self.domain.w_radius}")

    def value(self, x, w=None) -> np.ndarray:
        x, w = prepare_points(self.k, self.m, x, w)
        return self._value(x, w) + self.offset

    def gradient_x(self, x, w=None) -> np.ndarray:
        """``grad_x phi`` in the configured derivative mode (no domain check)."""
        x, w = prepare_points(self.k, self.m, x, w)
        if self.derivative_mode == "analytic":
            return self._first(x, w)[0]
        return self._fd_first(x, w)[0]

    def _steps(self, c):
        return self.fd_step * (1.0 + np.abs(c))

    def _fd_first(self, x, w):
        gx = np.empty(x.shape)
        for a in range(self.k):
            h = self._steps(x[..., a])
            e = np.zeros(self.k)
            e[a] = 1.0
            xp = x + h[..., None] * e
            xm = x - h[..., None] * e
            gx[..., a] = (self._value(xp, w) - self._value(xm, w)) / (2 * h)
        gw = np.empty(w.shape, dtype=complex)
        for j in range(self.m):
            e = np.zeros(self.m)
            e[j] = 1.0
            ha = self._steps(w[..., j].real)
            hb = self._steps(w[..., j].imag)
            da = (self._value(x, w + ha[..., None] * e) - self._value(x, w - ha[..., None] * e)) / (2 * ha)
            db = (self._value(x, w + 1j * hb[..., None] * e) - self._value(x, w - 1j * hb[..., None] * e)) / (2 * hb)
            gw[..., j] = 0.5 * (da - 1j * db)
        return gx, gw

    def _fd_second(self, x, w):
        # Second derivatives difference the analytic first derivatives; value-only
        # second differences lose all relative accuracy where phi_xx ~ exp(-2|x|).
        k, m = self.k, self.m
        hxx = np.empty(x.shape + (k,))
        hxw = np.empty(x.shape + (m,), dtype=complex)
        hww = np.empty(w.shape + (m,), dtype=complex)
        for b in range(k):
            h = self._steps(x[..., b])
            e = np.zeros(k)
            e[b] = 1.0
            gp = self._first(x + h[..., None] * e, w)[0]
            gm = self._first(x - h[..., None] * e, w)[0]
            hxx[..., :, b] = (gp - gm) / (2 * h[..., None])
        for j in range(m):
            e = np.zeros(m)
            e[j] = 1.0
            ha = self._steps(w[..., j].real)[..., None]
            hb = self._steps(w[..., j].imag)[..., None]
            gxa_p, gwa_p = self._first(x, w + ha * e)
            gxa_m, gwa_m = self._first(x, w - ha * e)
            gxb_p, gwb_p = self._first(x, w + 1j * hb * e)
            gxb_m, gwb_m = self._first(x, w - 1j * hb * e)
            hxw[..., :, j] = 0.5 * ((gxa_p - gxa_m) / (2 * ha) + 1j * (gxb_p - gxb_m) / (2 * hb))
            hww[..., :, j] = 0.5 * ((gwa_p - gwa_m) / (2 * ha) + 1j * (gwb_p - gwb_m) / (2 * hb))
        hxx = 0.5 * (hxx + np.swapaxes(hxx, -1, -2))
        hww = 0.5 * (hww + np.conj(np.swapaxes(hww, -1, -2)))
        return hxx, hxw, hww

    def raw_bundle(self, x, w) -> DerivativeBundle:
        """Bundle without domain or convexity checks (used by stencils and solvers)."""
        value = self._value(x, w) + self.offset
        if self.derivative_mode == "analytic":
            gx, gw = self._first(x, w)
            hxx, hxw, hww = self._second(x, w)
        else:
            gx, gw = self._fd_first(x, w)
            hxx, hxw, hww = self._fd_second(x, w)
        return DerivativeBundle(value, gx, hxx, gw, hww, hxw)


def _check_convex(hxx: np.ndarray) -> None:
    try:
        np.linalg.cholesky(hxx)
    except np.linalg.LinAlgError:
        raise ConvexityError("hess_xx is not positive definite") from None


def eval_bundle(P: TorusPotential, x, w=None) -> DerivativeBundle:
    """Value and derivatives of ``P`` at ``(x, w)``.

    Raises
    ------
    DomainError
        If a point leaves the working box.
    ConvexityError
        If ``hess_xx`` fails to be positive definite at some point.
    """
    x, w = prepare_points(P.k, P.m, x, w)
    P.check_domain(x, w)
    bundle = P.raw_bundle(x, w)
    if not (np.all(np.isfinite(bundle.hess_xx)) and np.all(np.isfinite(bundle.hess_wwbar))):
        raise ArithmeticError("non-finite derivatives")
    _check_convex(bundle.hess_xx)
    return bundle


def mixed_hessian(P: TorusPotential, x, w=None) -> MixedHessian:
    b = eval_bundle(P, x, w)
    return MixedHessian(b.hess_xx, b.hess_xwbar, b.hess_wwbar)


# --------------------------------------------------------------------------
# builtin families


@dataclass(frozen=True)
class QuadraticSeparable(TorusPotential):
    """``phi = x^T A x / 2 + |w|^2`` with ``A`` symmetric positive definite.

    ``box`` restricts the orbit measure to ``[-box, box]^k`` (the working
    x-box then coincides with it).
    """

    A: Optional[tuple] = None
    box: Optional[float] = None

    family = "quadratic_separable"

    def __post_init__(self):
        super().__post_init__()
        if self.A is None:
            object.__setattr__(self, "A", tuple(tuple(float(i == j) for j in range(self.k)) for i in range(self.k)))
        else:
            object.__setattr__(self, "A", tuple(tuple(float(v) for v in row) for row in self.A))
        A = np.array(self.A)
        if A.shape != (self.k, self.k) or not np.allclose(A, A.T):
            raise ValueError("A must be a symmetric k x k matrix")
        if np.linalg.eigvalsh(A).min() <= 0:
            raise ValueError("A must be positive definite")
        if self.box is not None:
            object.__setattr__(self, "domain", replace(self.domain, x_radius=float(self.box)))

    @property
    def params(self) -> dict:
        return {"A": [list(r) for r in self.A], "box": self.box}

    @property
    def x_support(self):
        return self.box

    def _value(self, x, w):
        A = np.array(self.A)
        return 0.5 * np.einsum("...i,ij,...j->...", x, A, x) + np.sum(np.abs(w) ** 2, axis=-1)

    def _first(self, x, w):
        return x @ np.array(self.A).T, np.conj(w)

    def _second(self, x, w):
        lead = np.broadcast_shapes(x.shape[:-1], w.shape[:-1])
        hxx = np.broadcast_to(np.array(self.A), lead + (self.k, self.k)).copy()
        hxw = np.zeros(lead + (self.k, self.m), dtype=complex)
        hww = np.broadcast_to(np.eye(self.m, dtype=complex), lead + (self.m, self.m)).copy()
        return hxx, hxw, hww


@dataclass(frozen=True)
class ProjectiveModel(TorusPotential):
    """``phi = log(1 + sum_i exp(2 x_i) + |w|^2)``: the Fubini-Study potential on ``CP^(k+m)``."""

    family = "projective_model"

    def _parts(self, x, w):
        e = np.exp(2.0 * x)
        S = 1.0 + e.sum(axis=-1) + np.sum(np.abs(w) ** 2, axis=-1)
        return e, S

    def _value(self, x, w):
        return np.log(self._parts(x, w)[1])

    def _first(self, x, w):
        e, S = self._parts(x, w)
        return 2.0 * e / S[..., None], np.conj(w) / S[..., None]

    def _second(self, x, w):
        e, S = self._parts(x, w)
        S2 = S[..., None, None]
        hxx = 4.0 * (e[..., :, None] * np.eye(self.k)) / S2 - 4.0 * e[..., :, None] * e[..., None, :] / S2**2
        hxw = -2.0 * e[..., :, None] * w[..., None, :] / S2**2
        hww = np.eye(self.m) / S2 - np.conj(w)[..., :, None] * w[..., None, :] / S2**2
        return hxx, hxw.astype(complex), hww.astype(complex)


@dataclass(frozen=True)
class ToricFubiniStudy(ProjectiveModel):
    """Toric case ``m = 0``: ``phi = log(1 + sum_i exp(2 x_i))``."""

    family = "toric_fs"

    def __post_init__(self):
        super().__post_init__()
        if self.m != 0:
            raise ValueError("toric_fs has no transverse variables (m = 0)")


@dataclass(frozen=True)
class FamilyDescriptor:
    name: str
    summary: str
    parameters: dict
    constraints: str


_FAMILIES = {
    "quadratic_separable": QuadraticSeparable,
    "projective_model": ProjectiveModel,
    "toric_fs": ToricFubiniStudy,
}


def builtin_catalog() -> list:
    return [
        FamilyDescriptor(
            "quadratic_separable",
            "x^T A x / 2 + |w|^2",
            {"A": "SPD k x k (default identity)", "box": "optional orbit truncation half-width"},
            "any k >= 1, m >= 0",
        ),
        FamilyDescriptor(
            "projective_model",
            "log(1 + sum exp(2 x_i) + |w|^2)",
            {},
            "any k >= 1, m >= 0",
        ),
        FamilyDescriptor("toric_fs", "log(1 + sum exp(2 x_i))", {}, "k >= 1, m = 0"),
    ]


def make_potential(family: str, k: int = 1, m: int = 0, *, derivative_mode: str = "analytic",
                   fd_step: float = 1e-5, x_radius: float = 6.0, w_radius: float = 2.0,
                   **params) -> TorusPotential:
    """Instantiate a builtin family by name."""
    try:
        cls = _FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown potential family {family!r}; known: {sorted(_FAMILIES)}") from None
    return cls(k=k, m=m, derivative_mode=derivative_mode, fd_step=fd_step,
               domain=Domain(x_radius, w_radius), **params)
