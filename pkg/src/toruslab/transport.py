"""One-dimensional optimal transport along orbits.

On a line the quadratic-cost optimal map between two densities is the
monotone rearrangement ``T = G^{-1} o F``.  For ``k = 1`` the momentum map
along an orbit must coincide with it, and integrating ``T`` recovers the
potential up to an additive constant.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ComplexityError, DegenerateDensityError
from .legendre import GridFunction1D
from .measures import (
    DensityField,
    WeightFunction,
    average_density,
    conditional_density,
    dh_pushforward,
)
from .potentials import QuadraticSeparable, TorusPotential, prepare_points

__all__ = [
    "MonotoneMap1D",
    "ReconstructionReport",
    "UniquenessReport",
    "MAX_OT_POINTS",
    "cdf",
    "monotone_transport",
    "orbit_conditional_field",
    "orbit_transport_pair",
    "verify_momentum_is_transport",
    "reconstruct_potential",
    "compare_up_to_constant",
    "discrete_ot_oracle",
    "uniqueness_experiment",
]

MAX_OT_POINTS = 8


@dataclass(frozen=True)
class MonotoneMap1D:
    x_nodes: np.ndarray
    T_values: np.ndarray
    source_id: str = "source"
    target_id: str = "target"

    def __post_init__(self):
        if np.any(np.diff(self.T_values) <= 0):
            raise DegenerateDensityError("transport map is not strictly increasing")

    def __call__(self, x):
        return np.interp(x, self.x_nodes, self.T_values)


@dataclass(frozen=True)
class ReconstructionReport:
    w: np.ndarray
    sup_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.sup_error <= self.tol


@dataclass
class UniquenessReport:
    w_set: list
    offset_density_diff: float
    offset_momentum_diff: float
    offset_reconstruction_spread: float
    weight_scaling_diff: float
    competitor: str
    density_gap: float
    details: dict = field(default_factory=dict)


def _density_1d(density: DensityField):
    if len(density.axes) != 1:
        raise ValueError("expected a 1-D density")
    nodes, vals = density.axes[0], density.values
    if np.any(np.diff(nodes) <= 0):
        raise ValueError("density nodes must be ascending")
    return nodes, vals


def _cumulative(nodes, vals):
    """Left and right cumulative trapezoid integrals (right one accurate in the upper tail)."""
    cells = 0.5 * (vals[1:] + vals[:-1]) * np.diff(nodes)
    left = np.concatenate([[0.0], np.cumsum(cells)])
    right = np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]])
    return left, right


def cdf(density: DensityField) -> GridFunction1D:
    """Normalised cumulative distribution on the density's nodes (``F[-1] = 1``)."""
    nodes, vals = _density_1d(density)
    left, _ = _cumulative(nodes, vals)
    if not left[-1] > 0:
        raise DegenerateDensityError("density has zero mass")
    return GridFunction1D(nodes, left / left[-1])


def monotone_transport(source: DensityField, target: DensityField, *, source_id: str = "source",
                       target_id: str = "target") -> MonotoneMap1D:
    """Monotone rearrangement ``T = G^{-1} o F`` between two 1-D densities.

    The lower half of the source is matched through CDFs and the upper half
    through survival functions, so that thin upper tails keep strictly
    increasing values.  Inversion is linear interpolation.

    Raises
    ------
    DegenerateDensityError
        If either density has zero mass or a flat cumulative segment.
    """
    xs, fv = _density_1d(source)
    ps, gv = _density_1d(target)
    # a cell without mass makes the CDF flat there and the inverse ambiguous
    for name, nodes, vals in (("source", xs, fv), ("target", ps, gv)):
        if np.any(0.5 * (vals[1:] + vals[:-1]) * np.diff(nodes) <= 0):
            raise DegenerateDensityError(f"{name} CDF has flat segments")
    F, Fbar = _cumulative(xs, fv)
    G, Gbar = _cumulative(ps, gv)
    F, Fbar = F / F[-1], Fbar / Fbar[0]
    G, Gbar = G / G[-1], Gbar / Gbar[0]
    lower = F <= 0.5
    T = np.empty_like(xs)
    T[lower] = np.interp(F[lower], G, ps)
    # survival branch: Gbar decreases, so reverse for interpolation
    T[~lower] = np.interp(Fbar[~lower], Gbar[::-1], ps[::-1])
    return MonotoneMap1D(xs, T, source_id, target_id)


def orbit_conditional_field(P: TorusPotential, g: WeightFunction, w, x_grid, *, avg_grid=None) -> DensityField:
    """Conditional density along the orbit over ``w`` as a 1-D field (``k = 1``).

    The normaliser is averaged over ``avg_grid`` (default ``x_grid``), so a
    narrower ``x_grid`` gives a window onto the same conditional measure.
    """
    if P.k != 1:
        raise ValueError("orbitwise transport needs k = 1")
    x_grid = np.asarray(x_grid, dtype=float)
    avg_grid = x_grid if avg_grid is None else np.asarray(avg_grid, dtype=float)
    _, wv = prepare_points(1, P.m, np.zeros(1), w)
    wv = np.array(wv)
    mu = average_density(P, g, wv, avg_grid)
    eta = conditional_density(P, g, wv, x_grid, mu_hat=mu)
    return DensityField((x_grid,), np.clip(eta, 0, None), ("x_1",), wv, {"mu_hat": mu})


def orbit_transport_pair(P: TorusPotential, g: WeightFunction, w, x_grid, p_grid=None, *, avg_grid=None):
    """Source (conditional on ``x_grid``) and target (its momentum pushforward on ``p_grid``).

    ``p_grid`` defaults to a uniform grid with as many nodes as ``x_grid``
    spanning the momentum image of ``[x_grid[0], x_grid[-1]]``.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    avg_grid = x_grid if avg_grid is None else np.asarray(avg_grid, dtype=float)
    source = orbit_conditional_field(P, g, w, x_grid, avg_grid=avg_grid)
    wv = source.w
    if p_grid is None:
        ends = P.gradient_x(np.array([[x_grid[0]], [x_grid[-1]]]), np.broadcast_to(wv, (2, P.m)))[:, 0]
        p_grid = np.linspace(ends[0], ends[1], len(x_grid))
    target = dh_pushforward(P, g, wv, avg_grid, p_grid)
    return source, target


def verify_momentum_is_transport(P: TorusPotential, g: WeightFunction, w, x_grid, p_grid=None, *,
                                 avg_grid=None) -> float:
    """Sup over ``x_grid`` of ``|grad_x phi(x, w) - T(x)|`` with ``T`` the monotone map
    from the conditional measure to its momentum pushforward.
    """
    source, target = orbit_transport_pair(P, g, w, x_grid, p_grid, avg_grid=avg_grid)
    T = monotone_transport(source, target, source_id="eta_w", target_id="nu_w")
    xs = source.axes[0]
    mom = P.gradient_x(xs[:, None], np.broadcast_to(source.w, (len(xs), P.m)))[:, 0]
    return float(np.max(np.abs(mom - T.T_values)))


def reconstruct_potential(eta: DensityField, nu: DensityField, anchor_x: float) -> GridFunction1D:
    """Integrate the monotone map ``eta -> nu`` from ``anchor_x`` (where the result vanishes)."""
    T = monotone_transport(eta, nu)
    xs = T.x_nodes
    cells = 0.5 * (T.T_values[1:] + T.T_values[:-1]) * np.diff(xs)
    U = np.concatenate([[0.0], np.cumsum(cells)])
    return GridFunction1D(xs, U - np.interp(anchor_x, xs, U))


def compare_up_to_constant(u: GridFunction1D, reference, w=None, tol: float = 1e-3) -> ReconstructionReport:
    """Sup norm of the mean-centred difference between ``u`` and reference values on ``u.nodes``."""
    diff = u.values - np.asarray(reference, dtype=float)
    diff -= diff.mean()
    return ReconstructionReport(np.asarray(w) if w is not None else None, float(np.max(np.abs(diff))), tol)


def discrete_ot_oracle(source_points, target_points):
    """Exhaustive quadratic-cost assignment between two equal-size point sets.

    Returns ``(assignment, cost)`` where source ``i`` goes to target
    ``assignment[i]``.  Sets are limited to :data:`MAX_OT_POINTS` points.
    """
    X = np.asarray(source_points, dtype=float)
    Y = np.asarray(target_points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    n = len(X)
    if len(Y) != n:
        raise ValueError("point sets must have equal size")
    if n > MAX_OT_POINTS:
        raise ComplexityError(f"{n} points exceed the exhaustive limit {MAX_OT_POINTS}")
    C = np.sum((X[:, None, :] - Y[None, :, :]) ** 2, axis=-1)
    best, best_cost = None, np.inf
    rows = np.arange(n)
    for perm in itertools.permutations(range(n)):
        cost = C[rows, perm].sum()
        if cost < best_cost:
            best, best_cost = perm, cost
    return np.array(best, dtype=int), float(best_cost)


def uniqueness_experiment(P: TorusPotential, g: WeightFunction, w_set: Sequence, x_grid, *,
                          offset: float = 5.0, competitor: Optional[TorusPotential] = None,
                          anchors=(0.0, 1.0)) -> UniquenessReport:
    """Orbitwise uniqueness checks for ``k = 1``.

    Positive side: ``P`` and ``P + offset`` give the same conditionals and
    momentum maps, reconstructions from two anchors differ by a constant, and
    scaling ``g`` by 2 leaves the conditionals unchanged.  Negative side: a
    competitor potential (default: quadratic on the box ``[-1, 1]``) with a
    different momentum image has conditionals separated by a reported gap.
    """
    if P.k != 1:
        raise ValueError("uniqueness experiment needs k = 1")
    x_grid = np.asarray(x_grid, dtype=float)
    shifted = P.with_offset(offset)
    g2 = g.scaled(2.0)
    if competitor is None:
        competitor = QuadraticSeparable(k=1, m=P.m, box=1.0)
    box = competitor.x_support or competitor.domain.x_radius
    comp_grid = np.linspace(-box, box, len(x_grid))
    dens_diff = mom_diff = spread = scale_diff = gap = 0.0
    details = {}
    for w in w_set:
        _, wv = prepare_points(1, P.m, np.zeros(1), w)
        wv = np.array(wv)
        wb = np.broadcast_to(wv, (len(x_grid), P.m))
        eta = conditional_density(P, g, wv, x_grid, x_grid=x_grid)
        eta_shift = conditional_density(shifted, g, wv, x_grid, x_grid=x_grid)
        eta_scaled = conditional_density(P, g2, wv, x_grid, x_grid=x_grid)
        dens_diff = max(dens_diff, float(np.max(np.abs(eta - eta_shift))))
        scale_diff = max(scale_diff, float(np.max(np.abs(eta - eta_scaled))))
        mom_diff = max(mom_diff, float(np.max(np.abs(P.gradient_x(x_grid[:, None], wb)
                                                       - shifted.gradient_x(x_grid[:, None], wb)))))
        source, target = orbit_transport_pair(P, g, wv, x_grid)
        u_a = reconstruct_potential(source, target, anchors[0])
        u_b = reconstruct_potential(source, target, anchors[1])
        spread = max(spread, float(np.var(u_a.values - u_b.values)))
        # compare on the competitor's box, where both conditionals are defined
        eta_p = conditional_density(P, g, wv, comp_grid, x_grid=x_grid)
        eta_c = conditional_density(competitor, g, wv, comp_grid, x_grid=comp_grid)
        gap_w = float(np.max(np.abs(eta_p - eta_c)))
        details[repr(complex(np.atleast_1d(wv)[0])) if P.m else "none"] = gap_w
        gap = max(gap, gap_w)
    return UniquenessReport(list(w_set), dens_diff, mom_diff, spread, scale_diff,
                            competitor.family, gap, {"gap_per_w": details})
