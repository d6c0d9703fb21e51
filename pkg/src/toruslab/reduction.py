"""Momentum map, reduced forms and the volume-density factorisation.

The reduced form at a regular value ``q`` is stored as the Hermitian matrix
``sigma = -phi*_{w wbar}(q, w)`` (the ``-i/2`` form factor is dropped), while
``sigma_m = det(phi*_{w wbar})`` keeps the sign so that

    det D^2 phi(x, w) = (-1)^m * sigma_m(grad_x phi(x, w), w) * det D_x^2 phi(x, w)

can be checked literally.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import minors
from .errors import DomainError
from .legendre import conjugate_w_hessian, grad_p_conjugate
from .potentials import TorusPotential, eval_bundle, mixed_hessian, prepare_points

__all__ = [
    "ReducedForm",
    "FactorizationReport",
    "REGULARITY_THRESHOLD",
    "momentum_map",
    "reduced_form",
    "reduced_form_at",
    "verify_factorization",
    "minor_expansion_crosscheck",
]

REGULARITY_THRESHOLD = 1e-10


@dataclass(frozen=True)
class ReducedForm:
    q: np.ndarray
    w: np.ndarray
    sigma: np.ndarray
    sigma_m: np.ndarray

    @property
    def volume(self) -> np.ndarray:
        """``(-1)^m sigma_m = det(sigma)``."""
        m = self.sigma.shape[-1]
        return (-1) ** m * self.sigma_m


@dataclass(frozen=True)
class FactorizationReport:
    x: np.ndarray
    w: np.ndarray
    lhs: float
    rhs: float
    schur: float
    rel_errors: dict
    tol: float

    @property
    def passed(self) -> bool:
        finite = all(np.isfinite(v) for v in (self.lhs, self.rhs, self.schur))
        return finite and max(self.rel_errors.values()) <= self.tol


def momentum_map(P: TorusPotential, x, w=None) -> np.ndarray:
    """``grad_x phi(x, w)``."""
    return eval_bundle(P, x, w).grad_x


def reduced_form(P: TorusPotential, q, w=None, **kwargs) -> ReducedForm:
    """Reduced form at the momentum level ``q`` over the transverse point ``w``.

    ``q`` counts as regular when the Newton preimage exists inside the working
    box and ``det hess_xx >= REGULARITY_THRESHOLD`` there.
    """
    q, w = prepare_points(P.k, P.m, q, w)
    x = grad_p_conjugate(P, q, w, **kwargs)
    det_h = np.linalg.det(P.raw_bundle(x, w).hess_xx)
    if np.any(det_h < REGULARITY_THRESHOLD):
        raise DomainError("momentum level is not a regular value (det hess_xx below threshold)")
    hstar = conjugate_w_hessian(P, q, w, **kwargs)
    sigma = -hstar
    sigma_m = np.linalg.det(hstar).real if P.m else np.ones(q.shape[:-1])
    return ReducedForm(np.array(q), np.array(w), sigma, sigma_m)


def reduced_form_at(P: TorusPotential, x, w=None) -> ReducedForm:
    """Reduced form at the level ``q = grad_x phi(x, w)``, using ``x`` itself as the preimage.

    Equivalent to :func:`reduced_form` at that level, but skips the Newton
    inversion, so it stays usable where ``hess_xx`` is too flat for a
    reliable solve (box corners for ``k >= 2``).
    """
    x, w = prepare_points(P.k, P.m, x, w)
    b = P.raw_bundle(x, w)
    B = b.hess_xwbar
    hstar = -b.hess_wwbar + np.conj(np.swapaxes(B, -1, -2)) @ np.linalg.solve(b.hess_xx.astype(complex), B)
    sigma_m = np.linalg.det(hstar).real if P.m else np.ones(x.shape[:-1])
    return ReducedForm(np.array(b.grad_x), np.array(w), -hstar, sigma_m)


def _rel(a, b) -> float:
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale else 0.0


def verify_factorization(P: TorusPotential, x, w=None, tol: float = 1e-8, **kwargs) -> FactorizationReport:
    """Three-way check of the volume-density factorisation at one point.

    ``lhs`` is the determinant of the assembled mixed Hessian (float-mode
    minors machinery), ``rhs`` goes through the Legendre transform and the
    reduced form, and ``schur`` is ``det(C - B^* H^{-1} B) det(H)``.
    """
    x, w = prepare_points(P.k, P.m, x, w)
    if x.ndim != 1:
        raise ValueError("verify_factorization works on a single point")
    mh = mixed_hessian(P, x, w)
    lhs = float(np.real(minors.det(minors.SquareMatrix.floating(mh.matrix))))
    det_h = float(np.linalg.det(mh.hess_xx))
    q = momentum_map(P, x, w)
    rf = reduced_form(P, q, w, margin=None, **kwargs)
    rhs = float((-1) ** P.m * rf.sigma_m * det_h)
    schur_block = mh.schur_complement()
    schur = float(np.real(np.linalg.det(schur_block)) * det_h) if P.m else det_h
    errs = {"lhs_rhs": _rel(lhs, rhs), "lhs_schur": _rel(lhs, schur), "rhs_schur": _rel(rhs, schur)}
    return FactorizationReport(np.array(x), np.array(w), lhs, rhs, schur, errs, tol)


def _subsets(n, l):
    return list(itertools.combinations(range(n), l))


def _complex_det(a) -> complex:
    a = np.asarray(a)
    return complex(np.linalg.det(a)) if a.size else 1.0


def minor_expansion_crosscheck(P: TorusPotential, x, w=None) -> float:
    r"""Rebuild ``det(sigma)`` from the row-by-row expansion used in the factorisation argument.

    Each row of ``phi*_{w wbar} = -C + B^* H^{-1} B`` is split into its ``-C``
    part and its ``H^{-1}`` part.  Grouping the terms by the number ``l`` of
    rows drawn from the second part gives, for row set ``L`` and column set
    ``J``,

        det(B^*[L, a]) * det(H^{-1}[a, b]) * det(B[b, J]) * det(-C[L^c, J^c])

    summed over ascending ``a, b`` (Cauchy-Binet), with
    ``det(H^{-1}[a, b]) = (-1)^{|a|+|b|} D^{-l} sum_s sgn(s) prod D^{b_s(i)}_{a_i}``
    taken from :func:`minors.perm_minor_sum`.  Terms with ``l > k`` vanish.

    Returns the absolute difference to ``det(-phi*_{w wbar})`` computed directly.
    """
    if P.k > 3 or P.m > 3:
        raise ValueError("expansion cross-check is limited to k <= 3 and m <= 3")
    x, w = prepare_points(P.k, P.m, x, w)
    mh = mixed_hessian(P, x, w)
    H, B, C = mh.hess_xx, mh.coupling, mh.hess_wwbar
    Bh = mh.coupling_adjoint
    k, m = P.k, P.m
    Hm = minors.SquareMatrix.floating(H)
    D = minors.det(Hm)
    expansion = 0.0 + 0.0j
    for l in range(0, min(k, m) + 1):
        for L in _subsets(m, l):
            Lc = [i for i in range(m) if i not in L]
            for J in _subsets(m, l):
                Jc = [j for j in range(m) if j not in J]
                laplace_sign = (-1) ** (sum(L) + sum(J))
                rest = _complex_det((-C)[np.ix_(Lc, Jc)])
                if l == 0:
                    expansion += rest
                    continue
                block = 0.0 + 0.0j
                for a in _subsets(k, l):
                    left = _complex_det(Bh[np.ix_(L, a)])
                    for b in _subsets(k, l):
                        spec = minors.MinorSpec([i + 1 for i in b], [i + 1 for i in a])
                        inv_minor = (-1) ** (sum(a) + sum(b)) * minors.perm_minor_sum(Hm, spec) / D**l
                        block += left * inv_minor * _complex_det(B[np.ix_(b, J)])
                expansion += laplace_sign * block * rest
    sigma = -conjugate_w_hessian(P, momentum_map(P, x, w), w, margin=None)
    direct = _complex_det(-sigma)
    # expansion reproduces det(phi*_{w wbar}); det(sigma) = (-1)^m times it
    return float(abs(expansion - direct))

