"""g-Monge-Ampere densities, orbit averages and conditional measures.

Densities are taken with respect to ``dx`` along an orbit and Lebesgue measure
on the real and imaginary parts of ``w``.  The torus volume ``(2 pi)^k`` and
the constant relating ``(omega + i ddbar phi)^n`` to ``det D^2 phi`` are
dropped everywhere: only normalised quantities and ratios are compared.
Quadrature is the composite trapezoid rule on tensor grids.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConsistencyError, DegenerateDensityError, TruncationError
from .legendre import grad_p_conjugate
from .potentials import MixedHessian, TorusPotential, eval_bundle, prepare_points
from .reduction import reduced_form, reduced_form_at

__all__ = [
    "WeightFunction",
    "DensityField",
    "DisintegrationReport",
    "TestFunction",
    "trapezoid_weights",
    "ma_density",
    "average_density",
    "orbit_density",
    "conditional_density",
    "check_normalization",
    "check_disintegration",
    "default_test_functions",
    "dh_pushforward",
    "sample_orbit",
]

DEFAULT_TAIL_TOL = 1e-6
_CHUNK = 256


class WeightFunction:
    """Positive weight ``g`` on the moment image.

    Use the constructors :meth:`constant`, :meth:`exp_affine` and
    :meth:`table`; instances are callable on arrays of shape ``(..., k)``.
    """

    def __init__(self, fn: Callable, kind: str, params: dict):
        self._fn = fn
        self.kind = kind
        self.params = params

    @classmethod
    def constant(cls, c: float = 1.0) -> "WeightFunction":
        if not c > 0:
            raise ValueError("constant weight must be positive")
        return cls(lambda p: np.full(np.shape(p)[:-1], float(c)), "constant", {"c": float(c)})

    @classmethod
    def exp_affine(cls, a, b: float = 0.0) -> "WeightFunction":
        """``g(p) = exp(a . p + b)``."""
        a = np.atleast_1d(np.asarray(a, dtype=float))
        return cls(lambda p: np.exp(np.asarray(p) @ a + b), "exp_affine", {"a": a.tolist(), "b": float(b)})

    @classmethod
    def table(cls, nodes, values) -> "WeightFunction":
        """Piecewise-linear interpolation of tabulated values (``k = 1``)."""
        nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if nodes.ndim != 1 or nodes.shape != values.shape or np.any(np.diff(nodes) <= 0):
            raise ValueError("table weight needs ascending 1-D nodes and matching values")
        if np.any(values <= 0):
            raise ValueError("table weight must be positive")
        return cls(lambda p: np.interp(np.asarray(p)[..., 0], nodes, values), "table",
                   {"nodes": nodes.tolist(), "values": values.tolist()})

    def __call__(self, p) -> np.ndarray:
        return self._fn(np.asarray(p, dtype=float))

    def scaled(self, c: float) -> "WeightFunction":
        fn = self._fn
        return WeightFunction(lambda p: c * fn(p), self.kind, dict(self.params, scale=c))

    def check_positive(self, samples) -> None:
        if np.any(self(samples) <= 0):
            raise ValueError("weight is not positive on the sampled moment values")

    def describe(self) -> dict:
        return {"kind": self.kind, **self.params}


def trapezoid_weights(nodes) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    h = np.diff(nodes)
    wts = np.zeros_like(nodes)
    wts[:-1] += h / 2
    wts[1:] += h / 2
    return wts


@dataclass
class DensityField:
    """Density sampled on a tensor grid.

    ``axes`` holds one node array per coordinate and ``values`` has shape
    ``tuple(len(a) for a in axes)``.  ``w`` records the orbit parameter for
    orbit slices (written as constant columns in CSV dumps).
    """

    axes: tuple
    values: np.ndarray
    labels: tuple
    w: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != tuple(len(a) for a in self.axes):
            raise ValueError("values do not match the grid shape")
        if np.any(self.values < 0):
            raise ValueError("densities must be nonnegative")

    @property
    def weights(self) -> np.ndarray:
        out = np.ones(())
        for a in self.axes:
            out = np.multiply.outer(out, trapezoid_weights(a))
        return out

    def mass(self) -> float:
        return float(np.sum(self.values * self.weights))

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def to_csv(self, path) -> None:
        path = Path(path)
        header = list(self.labels)
        wcols = []
        if self.w is not None:
            for j, wj in enumerate(np.atleast_1d(self.w)):
                header += [f"re_w_{j + 1}", f"im_w_{j + 1}"]
                wcols += [repr(float(wj.real)), repr(float(wj.imag))]
        header.append("value")
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for pt, v in zip(self.points(), self.values.ravel()):
                writer.writerow([repr(float(c)) for c in pt] + wcols + [repr(float(v))])


@dataclass(frozen=True)
class DisintegrationReport:
    test_function: str
    lhs: float
    rhs: float

    @property
    def error(self) -> float:
        return abs(self.lhs - self.rhs)


@dataclass(frozen=True)
class TestFunction:
    name: str
    fn: Callable

    def __call__(self, x, w):
        return self.fn(x, w)


def _grid_points(k: int, x_grid) -> np.ndarray:
    x_grid = np.asarray(x_grid, dtype=float)
    if x_grid.ndim != 1 or len(x_grid) < 2 or np.any(np.diff(x_grid) <= 0):
        raise ValueError("x_grid must be an ascending 1-D node array")
    mesh = np.meshgrid(*([x_grid] * k), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def _grid_weights(k: int, x_grid) -> np.ndarray:
    w1 = trapezoid_weights(x_grid)
    out = np.ones(())
    for _ in range(k):
        out = np.multiply.outer(out, w1)
    return out.ravel()


def ma_density(P: TorusPotential, g: WeightFunction, x, w=None) -> np.ndarray:
    """``g(grad_x phi) * det D^2 phi`` at ``(x, w)``."""
    b = eval_bundle(P, x, w)
    det = MixedHessian(b.hess_xx, b.hess_xwbar, b.hess_wwbar).determinant()
    return g(b.grad_x) * det


def _tail_fraction(P: TorusPotential, values: np.ndarray, x_grid: np.ndarray, k: int) -> np.ndarray:
    """Estimated fraction of mass outside the x-box, per leading index.

    ``values`` has shape ``(N, n, ..., n)``.  Each axis marginal is
    extrapolated past both ends with an exponential fitted to its last two
    nodes; a non-decaying end gives an infinite estimate.
    """
    if P.x_support is not None and np.isclose(x_grid[0], -P.x_support) and np.isclose(x_grid[-1], P.x_support):
        return np.zeros(values.shape[0])
    w1 = trapezoid_weights(x_grid)
    total = values.reshape(values.shape[0], -1) @ _grid_weights(k, x_grid)
    tail = np.zeros(values.shape[0])
    for ax in range(1, k + 1):
        marg = values
        for other in range(k, 0, -1):
            if other != ax:
                marg = np.tensordot(marg, w1, axes=([other], [0]))
        marg = marg.reshape(values.shape[0], -1)
        for end, nxt, h in ((0, 1, x_grid[1] - x_grid[0]), (-1, -2, x_grid[-1] - x_grid[-2])):
            f0, f1 = marg[:, end], marg[:, nxt]
            with np.errstate(divide="ignore", invalid="ignore"):
                rate = np.log(f1 / f0) / h
                est = np.where(f0 <= 0, 0.0, np.where(f1 > f0, f0 / rate, np.inf))
            tail += est
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(total > 0, tail / total, np.inf)


def orbit_density(P: TorusPotential, g: WeightFunction, w, x_grid) -> DensityField:
    """``ma_density`` on the product x-grid at fixed ``w``."""
    pts = _grid_points(P.k, x_grid)
    _, w = prepare_points(P.k, P.m, pts[:1], w)
    vals = ma_density(P, g, pts, np.broadcast_to(w[0], (len(pts), P.m)))
    shape = (len(x_grid),) * P.k
    return DensityField((x_grid,) * P.k, np.clip(vals, 0, None).reshape(shape),
                        tuple(f"x_{i + 1}" for i in range(P.k)), np.asarray(w[0]))


def _average_many(P, g, W, x_grid, tail_tol):
    """Orbit averages for a stack of transverse points ``W`` of shape ``(N, m)``."""
    pts = _grid_points(P.k, x_grid)
    wts = _grid_weights(P.k, x_grid)
    xx = np.broadcast_to(pts, (len(W),) + pts.shape)
    ww = np.broadcast_to(W[:, None, :], (len(W), len(pts), P.m))
    dens = ma_density(P, g, xx, ww)
    mu = dens @ wts
    if tail_tol is not None:
        frac = _tail_fraction(P, dens.reshape((len(W),) + (len(x_grid),) * P.k), np.asarray(x_grid), P.k)
        if np.any(frac > tail_tol):
            raise TruncationError(
                f"estimated mass outside the x-box is {np.max(frac):.2e} of the total (limit {tail_tol:.1e})")
    return mu, dens


def average_density(P: TorusPotential, g: WeightFunction, w, x_grid, *, tail_tol: Optional[float] = DEFAULT_TAIL_TOL):
    """Orbit average ``mu_hat(w) = int g(m) det D^2 phi dx`` by trapezoid quadrature.

    ``w`` may be a single point ``(m,)`` (scalar result) or a stack ``(N, m)``.

    Raises
    ------
    TruncationError
        If the estimated tail mass beyond the grid exceeds ``tail_tol`` of the total.
    """
    W = np.asarray(w if w is not None else np.zeros(P.m), dtype=complex)
    single = W.ndim <= 1
    W = W.reshape(-1, P.m) if P.m else np.zeros((1, 0), dtype=complex)
    mu = np.concatenate([_average_many(P, g, W[i:i + _CHUNK], x_grid, tail_tol)[0]
                         for i in range(0, len(W), _CHUNK)])
    return float(mu[0]) if single else mu


def _reduced_conditional(P, g, x, w, mu_hat):
    """``(-1)^m g(m) sigma_m(m, w) det hess_xx / mu_hat`` for stacked points."""
    b = eval_bundle(P, x, w)
    q = b.grad_x
    rf = reduced_form_at(P, x, w)
    det_h = np.linalg.det(b.hess_xx)
    return (-1) ** P.m * g(q) * rf.sigma_m * det_h / mu_hat


def conditional_density(P: TorusPotential, g: WeightFunction, w, x, *, x_grid=None,
                        mu_hat: Optional[float] = None) -> np.ndarray:
    """Density of the conditional measure along the orbit over ``w``.

    Evaluated through the reduced form at the momentum value of ``x``; the
    normaliser ``mu_hat`` is the g-weighted orbit average, computed on
    ``x_grid`` unless supplied.
    """
    if mu_hat is None:
        if x_grid is None:
            raise ValueError("need x_grid or mu_hat")
        mu_hat = average_density(P, g, w, x_grid)
    if not mu_hat > 0:
        raise DegenerateDensityError(f"orbit average {mu_hat!r} is not positive")
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or (P.k == 1 and x.ndim == 1):
        x = x.reshape(-1, 1) if x.ndim else x.reshape(1, 1)
        squeeze = True
    else:
        squeeze = False
    x, ww = prepare_points(P.k, P.m, x, w)
    out = _reduced_conditional(P, g, np.array(x), np.array(ww), mu_hat)
    return out if not squeeze else out.reshape(-1)


def check_normalization(P: TorusPotential, g: WeightFunction, w, x_grid) -> float:
    """``|int eta_w dx - 1|`` on the product x-grid."""
    pts = _grid_points(P.k, x_grid)
    mu = average_density(P, g, w, x_grid)
    eta = conditional_density(P, g, w, pts, mu_hat=mu)
    return abs(float(eta @ _grid_weights(P.k, x_grid)) - 1.0)


def default_test_functions() -> list:
    """Polynomial-times-Gaussian test functions of ``(x, w)`` (``x`` shape ``(..., k)``)."""
    x1 = lambda x: x[..., 0]  # noqa: E731
    r2 = lambda w: np.sum(np.abs(w) ** 2, axis=-1)  # noqa: E731
    re1 = lambda w: w[..., 0].real if w.shape[-1] else np.zeros(w.shape[:-1])  # noqa: E731
    im1 = lambda w: w[..., 0].imag if w.shape[-1] else np.zeros(w.shape[:-1])  # noqa: E731
    one = lambda x, w: np.ones(np.broadcast_shapes(x.shape[:-1], w.shape[:-1]))  # noqa: E731
    return [
        TestFunction("one", one),
        TestFunction("x", lambda x, w: x1(x) + 0 * r2(w)),
        TestFunction("x^2", lambda x, w: x1(x) ** 2 + 0 * r2(w)),
        TestFunction("x*exp(-|w|^2)", lambda x, w: x1(x) * np.exp(-r2(w))),
        TestFunction("x^2*exp(-|w|^2)", lambda x, w: x1(x) ** 2 * np.exp(-r2(w))),
        TestFunction("exp(-x^2)", lambda x, w: np.exp(-x1(x) ** 2) + 0 * r2(w)),
        TestFunction("(1+x)*exp(-x^2-|w|^2)", lambda x, w: (1 + x1(x)) * np.exp(-x1(x) ** 2 - r2(w))),
        TestFunction("re(w)*x*exp(-x^2)", lambda x, w: re1(w) * x1(x) * np.exp(-x1(x) ** 2)),
        TestFunction("im(w)^2*exp(-|w|^2)", lambda x, w: im1(w) ** 2 * np.exp(-r2(w)) + 0 * x1(x)),
        TestFunction("|w|^2", lambda x, w: r2(w) + 0 * x1(x)),
        TestFunction("exp(-|w|^2)", lambda x, w: np.exp(-r2(w)) + 0 * x1(x)),
        TestFunction("x^3*exp(-(x-1)^2)*re(w)^2", lambda x, w: x1(x) ** 3 * np.exp(-(x1(x) - 1) ** 2) * re1(w) ** 2),
    ]


def _w_points(m: int, w_grid):
    w_grid = np.asarray(w_grid, dtype=float)
    if m == 0:
        return np.zeros((1, 0), dtype=complex), np.ones(1)
    mesh = np.meshgrid(*([w_grid] * (2 * m)), indexing="ij")
    re = np.stack([mesh[2 * j].ravel() for j in range(m)], axis=-1)
    im = np.stack([mesh[2 * j + 1].ravel() for j in range(m)], axis=-1)
    wts = np.ones(())
    for _ in range(2 * m):
        wts = np.multiply.outer(wts, trapezoid_weights(w_grid))
    return re + 1j * im, wts.ravel()


def check_disintegration(P: TorusPotential, g: WeightFunction, f_suite: Optional[Sequence[TestFunction]],
                         x_grid, w_grid, *, tail_tol: Optional[float] = DEFAULT_TAIL_TOL) -> list:
    """Compare ``int f dmu`` with ``int (int f d eta_w) d mu_hat(w)`` on a product grid.

    ``w_grid`` gives the nodes used for the real and the imaginary part of
    every transverse coordinate.  The joint integral uses ``ma_density``; the
    iterated one uses :func:`conditional_density` (reduced-form path) and
    :func:`average_density`.
    """
    if f_suite is None:
        f_suite = default_test_functions()
    pts = _grid_points(P.k, x_grid)
    xw = _grid_weights(P.k, x_grid)
    W, ww = _w_points(P.m, w_grid)
    lhs = np.zeros(len(f_suite))
    rhs = np.zeros(len(f_suite))
    for start in range(0, len(W), _CHUNK):
        Wc, wc = W[start:start + _CHUNK], ww[start:start + _CHUNK]
        mu, dens = _average_many(P, g, Wc, x_grid, tail_tol)
        if np.any(mu <= 0):
            raise DegenerateDensityError("non-positive orbit average")
        xx = np.broadcast_to(pts, (len(Wc),) + pts.shape)
        wb = np.broadcast_to(Wc[:, None, :], (len(Wc), len(pts), P.m))
        eta = _reduced_conditional(P, g, np.array(xx), np.array(wb), mu[:, None])
        for i, f in enumerate(f_suite):
            fv = f(xx, wb)
            lhs[i] += wc @ ((fv * dens) @ xw)
            rhs[i] += wc @ (mu * ((fv * eta) @ xw))
    return [DisintegrationReport(f.name, float(a), float(b)) for f, a, b in zip(f_suite, lhs, rhs)]


def sample_orbit(P: TorusPotential, g: WeightFunction, w, x_grid, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` orbit points distributed by the conditional density on the x-box.

    ``k = 1`` inverts the piecewise-linear CDF; higher ``k`` picks grid cells
    by mass and jitters uniformly inside them.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    dens = orbit_density(P, g, w, x_grid)
    if P.k == 1:
        v = dens.values
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(x_grid))])
        cdf /= cdf[-1]
        return np.interp(rng.random(n), cdf, x_grid)[:, None]
    cell_mass = dens.values
    for ax in range(P.k):
        cell_mass = 0.5 * (np.take(cell_mass, range(1, len(x_grid)), axis=ax)
                           + np.take(cell_mass, range(len(x_grid) - 1), axis=ax))
    h = np.diff(x_grid)
    vol = np.ones(())
    for _ in range(P.k):
        vol = np.multiply.outer(vol, h)
    prob = (cell_mass * vol).ravel()
    prob /= prob.sum()
    idx = rng.choice(len(prob), size=n, p=prob)
    cells = np.stack(np.unravel_index(idx, cell_mass.shape), axis=-1)
    lo = x_grid[cells]
    return lo + rng.random((n, P.k)) * h[cells]


def dh_pushforward(P: TorusPotential, g: WeightFunction, w, x_grid, p_grid=None, *,
                   mode: str = "change_of_variables", n_samples: int = 100_000, bins: int = 20,
                   seed: int = 0, rel_tol: float = 1e-8) -> DensityField:
    """Push the conditional measure on the orbit over ``w`` through the momentum map.

    ``change_of_variables`` (``k = 1``): the density at ``p`` is
    ``eta_w(x) / det hess_xx(x)`` with ``x = grad_p phi*(p, w)`` and
    ``eta_w = ma_density / mu_hat``; it is checked against the reduced-form
    expression ``(-1)^m g(p) sigma_m(p, w) / mu_hat`` (``info["max_rel_discrepancy"]``).
    ``p_grid`` defaults to the momentum image of ``x_grid``.

    ``histogram``: Monte-Carlo samples of the orbit measure are mapped and
    binned (any ``k``); ``info`` carries raw counts and bin edges.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    _, wv = prepare_points(P.k, P.m, np.zeros(P.k), w)
    wv = np.array(wv)
    mu = average_density(P, g, wv, x_grid)
    if mode == "histogram":
        rng = np.random.default_rng(seed)
        xs = sample_orbit(P, g, wv, x_grid, n_samples, rng)
        ps = P.gradient_x(xs, np.broadcast_to(wv, (n_samples, P.m)))
        lo = P.gradient_x(np.full((1, P.k), x_grid[0]), wv[None])[0]
        hi = P.gradient_x(np.full((1, P.k), x_grid[-1]), wv[None])[0]
        edges = [np.linspace(lo[i], hi[i], bins + 1) if P.k == 1 else
                 np.linspace(ps[:, i].min(), ps[:, i].max(), bins + 1) for i in range(P.k)]
        counts, edges = np.histogramdd(ps, bins=edges)
        vol = np.ones(())
        for e in edges:
            vol = np.multiply.outer(vol, np.diff(e))
        centers = tuple(0.5 * (e[1:] + e[:-1]) for e in edges)
        return DensityField(centers, counts / (n_samples * vol), tuple(f"p_{i + 1}" for i in range(P.k)), wv,
                            {"mode": mode, "counts": counts, "edges": edges, "n_samples": n_samples, "mu_hat": mu})
    if mode != "change_of_variables":
        raise ValueError(f"unknown mode {mode!r}")
    if P.k != 1:
        raise ValueError("change-of-variables mode needs k = 1; use mode='histogram'")
    if p_grid is None:
        p_grid = P.gradient_x(x_grid[:, None], np.broadcast_to(wv, (len(x_grid), P.m)))[:, 0]
    p_grid = np.asarray(p_grid, dtype=float)
    pp = p_grid[:, None]
    wb = np.broadcast_to(wv, (len(p_grid), P.m))
    xs = grad_p_conjugate(P, pp, wb, margin=None)
    b = eval_bundle(P, xs, wb)
    eta = ma_density(P, g, xs, wb) / mu
    via_orbit = eta / np.linalg.det(b.hess_xx)
    rf = reduced_form(P, pp, wb, margin=None)
    via_reduced = (-1) ** P.m * g(pp) * rf.sigma_m / mu
    scale = np.maximum(np.abs(via_reduced), np.finfo(float).tiny)
    disc = float(np.max(np.abs(via_orbit - via_reduced) / scale))
    if disc > rel_tol:
        raise ConsistencyError(f"pushforward density disagrees with the reduced form (rel. {disc:.2e})")
    return DensityField((p_grid,), np.clip(via_orbit, 0, None), ("p_1",), wv,
                        {"mode": mode, "mu_hat": mu, "reduced": via_reduced, "max_rel_discrepancy": disc})
