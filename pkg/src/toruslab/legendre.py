"""Partial Legendre transform in the orbit variables.

``phi*(p, w) = sup_x { x.p - phi(x, w) }`` is evaluated by solving
``grad_x phi(x, w) = p`` with a damped Newton method started at ``x = 0``.
The maximiser ``x*`` equals ``grad_p phi*(p, w)`` and inverts the momentum map
along the orbit over ``w``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull

from .errors import ConvexityError, DomainError, SolverError
from .potentials import TorusPotential, prepare_points

__all__ = [
    "ConjugatePoint",
    "MomentImage",
    "GridFunction1D",
    "conjugate_at",
    "grad_p_conjugate",
    "conjugate_w_derivative_identity_check",
    "conjugate_w_hessian",
    "wirtinger_hessian_fd",
    "discrete_llt",
    "moment_image",
    "moment_interval",
]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 100
DEFAULT_MARGIN = 1e-3
_ARMIJO_C = 1e-4
_POLISH_STEPS = 2


@dataclass(frozen=True)
class ConjugatePoint:
    p: np.ndarray
    w: np.ndarray
    value: np.ndarray
    argmax_x: np.ndarray
    newton_iters: np.ndarray
    residual: np.ndarray


@dataclass(frozen=True)
class GridFunction1D:
    """Samples ``values[i] = f(nodes[i])`` on an ascending grid."""

    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if nodes.ndim != 1 or nodes.shape != values.shape:
            raise ValueError("nodes and values must be 1-D arrays of equal length")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly ascending")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        return np.interp(t, self.nodes, self.values)

    def __len__(self):
        return len(self.nodes)


def moment_interval(P: TorusPotential, w=None):
    """Image of the working x-interval under the momentum map (``k = 1``)."""
    if P.k != 1:
        raise ValueError("moment_interval is only defined for k = 1")
    R = P.domain.x_radius
    lo, hi = P.gradient_x(np.array([[-R], [R]]), None if w is None else np.asarray(w)[None])[..., 0]
    return float(lo), float(hi)


def _solve_momentum(P: TorusPotential, p, w, tol: float, max_iters: int):
    """Batched damped Newton for ``grad_x phi(x, w) = p``.

    Returns ``(x, iters, residual)``.  Points whose iterate leaves the working
    box raise :class:`DomainError`.
    """
    x = np.zeros(p.shape)
    iters = np.zeros(p.shape[:-1], dtype=int)
    polish = np.zeros(p.shape[:-1], dtype=int)
    active = np.ones(p.shape[:-1], dtype=bool)
    bound = P.domain.x_radius + 1.0
    for _ in range(max_iters):
        if not active.any():
            break
        xa, wa, pa = x[active], w[active], p[active]
        b = P.raw_bundle(xa, wa)
        g = b.grad_x - pa
        res = np.max(np.abs(g), axis=-1)
        try:
            np.linalg.cholesky(b.hess_xx)
        except np.linalg.LinAlgError:
            raise ConvexityError("hess_xx lost positive definiteness during Newton") from None
        d = -np.linalg.solve(b.hess_xx, g[..., None])[..., 0]
        f0 = b.value - np.sum(pa * xa, axis=-1)
        slope = np.sum(g * d, axis=-1)
        t = np.ones(res.shape)
        # a negligible predicted decrease means F is flat at float resolution: take the full step
        tiny = np.abs(slope) <= 1e-12 * (1.0 + np.abs(f0))
        pending = ~tiny
        for _ls in range(60):
            if not pending.any():
                break
            xt = xa[pending] + t[pending, None] * d[pending]
            ft = P.value(xt, wa[pending]) - np.sum(pa[pending] * xt, axis=-1)
            ok = ft <= f0[pending] + _ARMIJO_C * t[pending] * slope[pending]
            idx = np.flatnonzero(pending)
            pending[idx[ok]] = False
            t[idx[~ok]] *= 0.5
        x_new = xa + t[:, None] * d
        ia = np.flatnonzero(active)
        x[ia] = x_new
        iters[ia] += 1
        converged = res <= tol
        polish[ia[converged]] += 1
        small_step = np.max(np.abs(t[:, None] * d), axis=-1) <= 1e-13 * (1.0 + np.max(np.abs(xa), axis=-1))
        done = converged & (small_step | (polish[ia] >= _POLISH_STEPS))
        active[ia[done]] = False
        if np.any(np.abs(x_new) > bound):
            raise DomainError("Newton iterate left the working box; momentum value outside the moment image")
    if active.any():
        raise SolverError(f"Newton did not converge in {max_iters} iterations at {active.sum()} point(s)")
    residual = np.max(np.abs(P.gradient_x(x, w) - p), axis=-1)
    if np.any(residual > tol):
        raise SolverError(f"final residual {residual.max():.2e} exceeds tolerance {tol:.1e}")
    return x, iters, residual


def _check_margin(P: TorusPotential, p, w, margin: float):
    if P.k != 1 or margin is None:
        return
    lo, hi = _interval_batch(P, w)
    eps = margin * (hi - lo)
    pv = p[..., 0]
    if np.any(pv < lo + eps - 1e-15) or np.any(pv > hi - eps + 1e-15):
        raise DomainError(f"momentum value outside the moment interval with margin {margin:g}")


def _interval_batch(P, w):
    R = P.domain.x_radius
    lo = P.gradient_x(np.full(w.shape[:-1] + (1,), -R), w)[..., 0]
    hi = P.gradient_x(np.full(w.shape[:-1] + (1,), R), w)[..., 0]
    return lo, hi


def conjugate_at(P: TorusPotential, p, w=None, *, tol: float = DEFAULT_TOL,
                 max_iters: int = DEFAULT_MAX_ITERS, margin: Optional[float] = DEFAULT_MARGIN) -> ConjugatePoint:
    """Evaluate ``phi*(p, w)`` and its maximiser.

    Parameters
    ----------
    p : array_like, shape (..., k)
        Momentum values.
    w : array_like, shape (..., m), optional
        Transverse coordinates (zero when omitted).
    margin : float or None
        For ``k = 1``, ``p`` must lie in the image of the working interval
        shrunk by ``margin`` times its length.  For ``k >= 2`` the maximiser is
        required to stay inside the working box instead.

    Raises
    ------
    DomainError, SolverError
    """
    p, w = prepare_points(P.k, P.m, p, w)
    p = np.array(p)
    w = np.array(w)
    _check_margin(P, p, w, margin)
    flat_p = p.reshape(-1, P.k)
    flat_w = w.reshape(flat_p.shape[0], P.m)
    x, iters, residual = _solve_momentum(P, flat_p, flat_w, tol, max_iters)
    R = P.domain.x_radius * (1 + 1e-9) + 1e-9
    if np.any(np.abs(x) > R):
        raise DomainError("maximiser outside the working box")
    value = np.sum(x * flat_p, axis=-1) - P.value(x, flat_w)
    lead = p.shape[:-1]
    return ConjugatePoint(
        p=p, w=w, value=value.reshape(lead), argmax_x=x.reshape(lead + (P.k,)),
        newton_iters=iters.reshape(lead), residual=residual.reshape(lead),
    )


def grad_p_conjugate(P: TorusPotential, p, w=None, **kwargs) -> np.ndarray:
    """``grad_p phi*(p, w)``, i.e. the inverse of the momentum map along the orbit."""
    tol = kwargs.get("tol", DEFAULT_TOL)
    cp = conjugate_at(P, p, w, **kwargs)
    resid = np.abs(P.gradient_x(cp.argmax_x, cp.w) - cp.p)
    if np.any(resid > tol):
        raise SolverError("round trip through the momentum map failed")
    return cp.argmax_x


def conjugate_w_hessian(P: TorusPotential, p, w=None, **kwargs) -> np.ndarray:
    """``phi*_{w_i wbar_j} = -phi_{w_i wbar_j} + phi_{x wbar_j} . H^{-1} phi_{x w_i}`` at ``x = grad_p phi*``."""
    x = grad_p_conjugate(P, p, w, **kwargs)
    _, w = prepare_points(P.k, P.m, p, w)
    b = P.raw_bundle(x, w)
    B = b.hess_xwbar
    hinv_b = np.linalg.solve(b.hess_xx.astype(complex), B)
    return -b.hess_wwbar + np.conj(np.swapaxes(B, -1, -2)) @ hinv_b


def _unit(m, j, scale):
    e = np.zeros(m, dtype=complex)
    e[j] = scale
    return e


def conjugate_w_derivative_identity_check(P: TorusPotential, p, w=None, *, step: float = 1e-5,
                                          **kwargs) -> float:
    """Max discrepancy between ``d/dw_i grad_p phi*`` (central differences) and ``-H^{-1} grad_x phi_{w_i}``."""
    p, w = prepare_points(P.k, P.m, p, w)
    p = np.array(p, dtype=float)
    w = np.array(w, dtype=complex)
    x = grad_p_conjugate(P, p, w, **kwargs)
    b = P.raw_bundle(x, w)
    # grad_x phi_{w_i} = conj(phi_{x wbar_i}) since phi is real
    rhs = -np.linalg.solve(b.hess_xx.astype(complex), np.conj(b.hess_xwbar))
    worst = 0.0
    for j in range(P.m):
        ha = step * (1.0 + np.abs(w[..., j].real))[..., None]
        hb = step * (1.0 + np.abs(w[..., j].imag))[..., None]
        da = (grad_p_conjugate(P, p, w + ha * _unit(P.m, j, 1), **kwargs)
              - grad_p_conjugate(P, p, w - ha * _unit(P.m, j, 1), **kwargs)) / (2 * ha)
        db = (grad_p_conjugate(P, p, w + hb * _unit(P.m, j, 1j), **kwargs)
              - grad_p_conjugate(P, p, w - hb * _unit(P.m, j, 1j), **kwargs)) / (2 * hb)
        lhs = 0.5 * (da - 1j * db)
        worst = max(worst, float(np.max(np.abs(lhs - rhs[..., :, j]))))
    return worst


def wirtinger_hessian_fd(f, w, step: float = 1e-4) -> np.ndarray:
    """Central-difference ``d^2 f / dw_i dwbar_j`` of a real function of ``w in C^m``.

    ``f`` maps an array of shape ``(..., m)`` to ``(...)``; the result has
    shape ``(..., m, m)``.
    """
    w = np.asarray(w, dtype=complex)
    m = w.shape[-1]
    units = [np.eye(m)[j] for j in range(m)]

    def d2(u, v):
        # second directional derivative along real directions u, v (complex vectors)
        return (f(w + step * (u + v)) - f(w + step * (u - v)) - f(w - step * (u - v)) + f(w - step * (u + v))) / (
            4 * step * step)

    out = np.empty(w.shape[:-1] + (m, m), dtype=complex)
    for i in range(m):
        a_i, b_i = units[i], 1j * units[i]
        for j in range(m):
            a_j, b_j = units[j], 1j * units[j]
            aa = d2(a_i, a_j)
            bb = d2(b_i, b_j)
            ab = d2(a_i, b_j)
            ba = d2(b_i, a_j)
            out[..., i, j] = 0.25 * (aa + bb + 1j * (ab - ba))
    return out


def discrete_llt(samples: GridFunction1D, slopes=None) -> GridFunction1D:
    """Discrete Legendre transform of a convex sampled function.

    The conjugate is ``f*(s) = max_i (s x_i - f_i)``.  Since the chord slopes
    are increasing, the maximising node is non-decreasing in ``s`` and one
    merged sweep over nodes and ascending output slopes suffices (linear time).

    Parameters
    ----------
    samples : GridFunction1D
        Convex samples on an ascending grid (chord slopes non-decreasing).
    slopes : array_like, optional
        Ascending output slopes.  Defaults to a uniform grid with as many
        points as the input, spanning the chord-slope range.
    """
    x, f = samples.nodes, samples.values
    if len(x) < 3:
        raise ValueError("need at least three samples")
    chord = np.diff(f) / np.diff(x)
    # weakly convex input is accepted so that a discrete conjugate (piecewise
    # linear) can be transformed again; decreasing chords beyond round-off are not
    if np.any(np.diff(chord) < -1e-12 * max(1.0, np.max(np.abs(chord)))):
        raise ValueError("samples are not convex")
    if slopes is None:
        slopes = np.linspace(chord[0], chord[-1], len(x))
    slopes = np.asarray(slopes, dtype=float)
    if np.any(np.diff(slopes) <= 0):
        raise ValueError("output slopes must be strictly ascending")
    out = np.empty(len(slopes))
    i = 0
    last = len(x) - 1
    for j, s in enumerate(slopes):
        # node i is optimal for s in [chord[i-1], chord[i]]
        while i < last and chord[i] < s:
            i += 1
        out[j] = s * x[i] - f[i]
    return GridFunction1D(slopes, out)


@dataclass(frozen=True)
class MomentImage:
    w: np.ndarray
    samples: np.ndarray
    hull: np.ndarray
    equations: Optional[np.ndarray] = None

    def contains(self, pts, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.samples.shape[-1] == 1:
            lo, hi = self.hull
            return (pts[:, 0] >= lo - tol) & (pts[:, 0] <= hi + tol)
        A, b = self.equations[:, :-1], self.equations[:, -1]
        return np.all(pts @ A.T + b <= tol, axis=-1)


def moment_image(P: TorusPotential, w=None, x_grid=None) -> MomentImage:
    """Gradient images of a product x-grid and their convex hull.

    The hull is an interval ``(lo, hi)`` for ``k = 1`` and an array of hull
    vertices for ``k >= 2``.
    """
    if x_grid is None:
        R = P.domain.x_radius
        x_grid = np.linspace(-R, R, 33)
    axes = np.meshgrid(*([np.asarray(x_grid, dtype=float)] * P.k), indexing="ij")
    pts = np.stack([a.ravel() for a in axes], axis=-1)
    w = np.zeros(P.m, dtype=complex) if w is None else np.asarray(w, dtype=complex)
    P.check_domain(pts, w)
    samples = P.gradient_x(pts, np.broadcast_to(w, (len(pts), P.m)))
    if P.k == 1:
        return MomentImage(w, samples, np.array([samples.min(), samples.max()]))
    hull = ConvexHull(samples)
    return MomentImage(w, samples, samples[hull.vertices], hull.equations)
