"""Command-line runner for the verification suites.

Usage::

    toruslab <suite> [--config run.json] [--seed N] [--out DIR]

Suites: ``verify-minors``, ``verify-legendre``, ``verify-factorization``,
``verify-disintegration``, ``verify-transport`` and ``all``.  The JSON
report (``report.json``) is byte-identical for a fixed seed; wall-clock
timings go to a separate ``timing.json``.  Exit status is 0 when every check
passes, 1 when any fails and 2 for a malformed configuration.
"""
from __future__ import annotations

import argparse
import copy
import itertools
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import legendre, measures, minors, reduction, transport
from .errors import ConfigError, ToruslabError
from .potentials import TorusPotential, make_potential

SCHEMA_VERSION = 1
SUITES = (
    "verify-minors",
    "verify-legendre",
    "verify-factorization",
    "verify-disintegration",
    "verify-transport",
)
MIN_GRID = 33

DEFAULT_CONFIG: Dict[str, Any] = {
    "suite": "all",
    "potential": {"family": "projective_model", "k": 1, "m": 1, "params": {},
                  "derivative_mode": "analytic", "fd_step": 1e-5},
    "weight": {"kind": "constant", "c": 1.0},
    "grids": {
        "x": 513,
        "w": 33,
        "transport": 2049,
        "x_radius": 8.0,
        "w_radius": 3.0,
        "points": 100,
        "minor_n_max": 5,
        "minor_trials": 10,
        "histogram_samples": 100000,
        "histogram_bins": 20,
        "ot_trials": 100,
    },
    "tolerances": {
        "minors_float": 1e-9,
        "momentum_residual": 1e-8,
        "young": 1e-10,
        "w_identity": 1e-5,
        "spot": 1e-10,
        "factorization": 1e-8,
        "factorization_fd": 1e-5,
        "normalization": 1e-6,
        "conditional": 1e-8,
        "disintegration": 1e-4,
        "dh_density": 1e-3,
        "dh_mass": 1e-6,
        "histogram_sigma": 3.0,
        "transport": 1e-3,
        "reconstruction": 1e-3,
        "uniqueness": 1e-12,
    },
    "seed": 0,
    "output": "toruslab-out",
}
GRID_KEYS = ("x", "w", "transport")
COUNT_KEYS = ("points", "minor_n_max", "minor_trials", "histogram_samples", "histogram_bins", "ot_trials")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    suites: List[str]
    potential: Dict[str, Any]
    weight: Dict[str, Any]
    grids: Dict[str, Any]
    tolerances: Dict[str, float]
    seed: int
    output: Path

    def make_potential(self) -> TorusPotential:
        p = self.potential
        return make_potential(p["family"], p["k"], p["m"], derivative_mode=p["derivative_mode"],
                              fd_step=p["fd_step"], x_radius=self.grids["x_radius"],
                              w_radius=self.grids["w_radius"], **p.get("params", {}))

    def make_weight(self) -> measures.WeightFunction:
        w = dict(self.weight)
        kind = w.pop("kind")
        if kind == "constant":
            return measures.WeightFunction.constant(w.get("c", 1.0))
        if kind == "exp_affine":
            return measures.WeightFunction.exp_affine(w["a"], w.get("b", 0.0))
        if kind == "table":
            return measures.WeightFunction.table(w["nodes"], w["values"])
        raise ConfigError(f"unknown weight kind {kind!r}")

    def as_dict(self) -> dict:
        return {
            "suites": list(self.suites),
            "potential": self.potential,
            "weight": self.weight,
            "grids": self.grids,
            "tolerances": self.tolerances,
            "seed": self.seed,
        }


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown key {where}.{key}")
        if isinstance(base[key], dict) and key != "params":
            if not isinstance(val, dict):
                raise ConfigError(f"{where}.{key} must be an object")
            out[key] = _merge(base[key], val, f"{where}.{key}")
        else:
            out[key] = val
    return out


def load_config(path: Optional[str], suite: Optional[str] = None, seed: Optional[int] = None,
                out: Optional[str] = None) -> RunConfig:
    """Read, merge with defaults and validate a run configuration.

    Raises
    ------
    ConfigError
        On unreadable JSON, unknown keys or values breaking the validation
        rules (grid sizes at least 33, tolerances positive).
    """
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    weight_override = raw.pop("weight", None)
    cfg = _merge(DEFAULT_CONFIG, raw, "config")
    if weight_override is not None:
        if not isinstance(weight_override, dict) or "kind" not in weight_override:
            raise ConfigError("weight must be an object with a 'kind'")
        cfg["weight"] = weight_override
    if suite is not None:
        cfg["suite"] = suite
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["output"] = out

    suite_val = cfg["suite"]
    names = list(SUITES) if suite_val == "all" else [suite_val] if isinstance(suite_val, str) else suite_val
    if not isinstance(names, list) or not names or any(n not in SUITES for n in names):
        raise ConfigError(f"unknown suite {suite_val!r}; choose from {', '.join(SUITES + ('all',))}")
    grids = cfg["grids"]
    for key in GRID_KEYS:
        if not isinstance(grids[key], int) or grids[key] < MIN_GRID:
            raise ConfigError(f"grids.{key} = {grids[key]!r}; grid sizes must be integers >= {MIN_GRID}")
    for key in COUNT_KEYS:
        if not isinstance(grids[key], int) or grids[key] < 1:
            raise ConfigError(f"grids.{key} must be a positive integer")
    for key in ("x_radius", "w_radius"):
        if not isinstance(grids[key], (int, float)) or not grids[key] > 0:
            raise ConfigError(f"grids.{key} must be positive")
    for key, val in cfg["tolerances"].items():
        if not isinstance(val, (int, float)) or isinstance(val, bool) or not val > 0:
            raise ConfigError(f"tolerances.{key} = {val!r}; tolerances must be positive numbers")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    rc = RunConfig(names, cfg["potential"], cfg["weight"], grids, cfg["tolerances"], cfg["seed"],
                   Path(cfg["output"]))
    try:
        rc.make_potential()
        rc.make_weight()
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid potential or weight: {exc}") from exc
    return rc


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def _clean(v):
    """Make values JSON-friendly (numpy scalars, complex numbers, arrays)."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (complex, np.complexfloating)):
        return [float(v.real), float(v.imag)]
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if np.isfinite(f) else str(f)
    return v


@dataclass
class CheckRecord:
    name: str
    values: Dict[str, Any]
    error: float
    tol: float
    passed: bool

    def as_dict(self) -> dict:
        return {"name": self.name, "values": _clean(self.values), "error": _clean(self.error),
                "tol": _clean(self.tol), "pass": bool(self.passed)}


@dataclass
class SuiteReport:
    suite: str
    records: List[CheckRecord] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def add(self, name: str, error: float, tol: float, passed: Optional[bool] = None, **values) -> None:
        error = float(error)
        ok = bool(np.isfinite(error) and error <= tol) if passed is None else bool(passed)
        self.records.append(CheckRecord(name, values, error, tol, ok))

    def as_dict(self) -> dict:
        return {"suite": self.suite, "pass": self.passed, "records": [r.as_dict() for r in self.records]}


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def _is_projective(P, k=None, m=None) -> bool:
    return P.family == "projective_model" and (k is None or P.k == k) and (m is None or P.m == m)


def _is_unit_weight(cfg: RunConfig) -> bool:
    return cfg.weight.get("kind") == "constant" and float(cfg.weight.get("c", 1.0)) == 1.0


def _sample_points(P: TorusPotential, rng: np.random.Generator, n: int, frac: float = 0.5):
    """Interior sample: ``|x_i| <= frac * x_radius`` (capped at 3) and ``|w_j| <= frac * w_radius``."""
    r = min(frac * P.domain.x_radius, 3.0)
    x = rng.uniform(-r, r, size=(n, P.k))
    rad = frac * P.domain.w_radius * np.sqrt(rng.uniform(0, 1, size=(n, P.m)))
    w = rad * np.exp(2j * np.pi * rng.uniform(0, 1, size=(n, P.m)))
    return x, w


def suite_minors(cfg: RunConfig, rng: np.random.Generator, out_dir: Path) -> SuiteReport:
    rep = SuiteReport("verify-minors")
    n_max, trials = cfg.grids["minor_n_max"], cfg.grids["minor_trials"]
    for n in range(1, n_max + 1):
        for l in range(1, min(n, minors.MAX_PERMUTATION_ORDER) + 1):
            checked = failures = 0
            for _ in range(trials):
                M = minors.SquareMatrix.exact(rng.integers(-9, 10, size=(n, n)).tolist())
                for a in itertools.combinations(range(1, n + 1), l):
                    for b in itertools.combinations(range(1, n + 1), l):
                        checked += 1
                        failures += not minors.verify_minor_identity(M, minors.MinorSpec(a, b)).passed
            rep.add(f"identity_exact_n{n}_l{l}", failures, 0.5, checks=checked, failures=failures)
    M = minors.SquareMatrix.exact([[1, 2, 3], [4, 5, 6], [7, 8, 10]])
    r = minors.verify_minor_identity(M, minors.MinorSpec((1, 2), (1, 2)))
    rep.add("desnanot_jacobi_instance", abs(int(r.lhs) - (-30)) + abs(int(r.rhs) - (-30)), 0.5,
            passed=r.passed and r.lhs == -30, lhs=str(r.lhs), rhs=str(r.rhs), det=str(minors.det(M)))
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 6))
        A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        l = int(rng.integers(1, n + 1))
        a = tuple(sorted(rng.choice(np.arange(1, n + 1), l, replace=False)))
        b = tuple(sorted(rng.choice(np.arange(1, n + 1), l, replace=False)))
        worst = max(worst, minors.verify_minor_identity(minors.SquareMatrix.floating(A), minors.MinorSpec(a, b)).error)
    rep.add("identity_float_complex", worst, cfg.tolerances["minors_float"])
    return rep


def suite_legendre(cfg: RunConfig, rng: np.random.Generator, out_dir: Path) -> SuiteReport:
    rep = SuiteReport("verify-legendre")
    P = cfg.make_potential()
    tol = cfg.tolerances
    x, w = _sample_points(P, rng, cfg.grids["points"])
    p = P.gradient_x(x, w)
    cp = legendre.conjugate_at(P, p, w, margin=None)
    resid = float(np.max(np.abs(P.gradient_x(cp.argmax_x, w) - p)))
    rep.add("momentum_round_trip", resid, tol["momentum_residual"],
            max_x_error=float(np.max(np.abs(cp.argmax_x - x))), points=len(x))
    young = np.abs(P.value(x, w) + cp.value - np.sum(x * p, axis=-1))
    scale = 1.0 + np.abs(P.value(x, w))
    rep.add("young_equality", float(np.max(young / scale)), tol["young"])
    if P.m:
        n_id = min(20, len(x))
        disc = legendre.conjugate_w_derivative_identity_check(P, p[:n_id], w[:n_id], margin=None)
        rep.add("w_derivative_identity", disc, tol["w_identity"], points=n_id)
    if P.k == 1 and P.family in ("projective_model", "toric_fs"):
        val = float(legendre.conjugate_at(P, np.array([1.0]), np.zeros(P.m)).value)
        rep.add("spot_conjugate_p1_w0", abs(val + np.log(2.0)), tol["spot"], value=val, expected=-np.log(2.0))
    if P.k == 1:
        lo, hi = legendre.moment_interval(P, np.zeros(P.m))
        rep.add("moment_interval_ordered", 0.0, 1.0, passed=bool(lo < hi), lo=lo, hi=hi)
    return rep


def suite_factorization(cfg: RunConfig, rng: np.random.Generator, out_dir: Path) -> SuiteReport:
    rep = SuiteReport("verify-factorization")
    P = cfg.make_potential()
    tol = cfg.tolerances["factorization_fd" if P.derivative_mode == "fd" else "factorization"]
    frac = 0.5 if P.k < 3 else 0.25
    x, w = _sample_points(P, rng, cfg.grids["points"], frac)
    worst = {"lhs_rhs": 0.0, "lhs_schur": 0.0, "rhs_schur": 0.0}
    for xi, wi in zip(x, w):
        r = reduction.verify_factorization(P, xi, wi, tol=tol)
        for key in worst:
            worst[key] = max(worst[key], r.rel_errors[key])
    rep.add("three_way_agreement", max(worst.values()), tol, points=len(x), **worst)
    if P.k <= 3 and P.m <= 3:
        cross = max(reduction.minor_expansion_crosscheck(P, xi, wi) for xi, wi in zip(x[:10], w[:10]))
        rep.add("minor_expansion_crosscheck", cross, 1e-8)
    if _is_projective(P, 1, 1):
        r = reduction.verify_factorization(P, np.zeros(1), np.zeros(1, dtype=complex), tol=tol)
        rep.add("spot_det_at_origin", abs(r.lhs - 0.5), cfg.tolerances["spot"], value=r.lhs, expected=0.5)
    return rep


def suite_disintegration(cfg: RunConfig, rng: np.random.Generator, out_dir: Path) -> SuiteReport:
    rep = SuiteReport("verify-disintegration")
    P = cfg.make_potential()
    g = cfg.make_weight()
    tol = cfg.tolerances
    R = P.x_support or P.domain.x_radius
    x_grid = np.linspace(-R, R, cfg.grids["x"])
    wr = min(2.0, P.domain.w_radius)
    w_grid = np.linspace(-wr, wr, cfg.grids["w"])
    w0 = np.zeros(P.m, dtype=complex)

    reports = measures.check_disintegration(P, g, None, x_grid, w_grid)
    rep.add("disintegration", max(r.error for r in reports), tol["disintegration"],
            per_function={r.test_function: r.error for r in reports})

    _, ws = _sample_points(P, rng, 10)
    norm = max(measures.check_normalization(P, g, wi, x_grid) for wi in ws)
    rep.add("normalization_10_orbits", norm, tol["normalization"])

    pts = measures._grid_points(P.k, x_grid[:: max(1, len(x_grid) // 64)])
    worst = 0.0
    for wi in ws:
        mu = measures.average_density(P, g, wi, x_grid)
        wb = np.broadcast_to(wi, (len(pts), P.m))
        eta = measures.conditional_density(P, g, wi, pts, mu_hat=mu)
        ma = measures.ma_density(P, g, pts, wb)
        worst = max(worst, float(np.max(np.abs(eta * mu - ma) / np.maximum(np.abs(ma), 1e-300))))
    rep.add("conditional_times_average", worst, tol["conditional"])

    orbit = measures.orbit_density(P, g, w0, x_grid)
    orbit.to_csv(out_dir / "orbit_density_w0.csv")

    if _is_projective(P, 1, 1) and _is_unit_weight(cfg):
        mu0 = measures.average_density(P, g, w0, x_grid)
        rep.add("spot_average_at_w0", abs(mu0 - 1.0), tol["normalization"], value=mu0, expected=1.0)
        eta00 = float(measures.conditional_density(P, g, w0, np.zeros(1), mu_hat=mu0)[0])
        rep.add("spot_conditional_at_origin", abs(eta00 - 0.5), tol["normalization"], value=eta00, expected=0.5)

    if P.k == 1:
        dh = measures.dh_pushforward(P, g, w0, x_grid)
        dh.to_csv(out_dir / "dh_pushforward_w0.csv")
        p = dh.axes[0]
        rep.add("dh_consistency", dh.info["max_rel_discrepancy"], 1e-8)
        if _is_projective(P, 1, 1) and _is_unit_weight(cfg):
            sup = float(np.max(np.abs(dh.values - (1 - p / 2))))
            rep.add("dh_density_closed_form", sup, tol["dh_density"])
            rep.add("dh_mass", abs(dh.mass() - 1.0), tol["dh_mass"], mass=dh.mass())
        n_s = cfg.grids["histogram_samples"]
        hist = measures.dh_pushforward(P, g, w0, x_grid, mode="histogram", n_samples=n_s,
                                       bins=cfg.grids["histogram_bins"], seed=int(rng.integers(2**31)))
        edges = hist.info["edges"][0]
        ref = np.interp(edges, p, dh.values)
        cell = 0.5 * (ref[1:] + ref[:-1]) * np.diff(edges)
        expected = n_s * cell / np.sum(cell)
        z = np.abs(hist.info["counts"] - expected) / np.sqrt(expected * (1 - expected / n_s))
        rep.add("dh_histogram_zscore", float(np.max(z)), tol["histogram_sigma"], bins=len(z))
    return rep


def suite_transport(cfg: RunConfig, rng: np.random.Generator, out_dir: Path) -> SuiteReport:
    rep = SuiteReport("verify-transport")
    P = cfg.make_potential()
    g = cfg.make_weight()
    tol = cfg.tolerances
    if P.k != 1:
        rep.add("applicable", 0.0, 1.0, passed=True, skipped="orbitwise transport needs k = 1")
        return rep
    R = P.x_support or P.domain.x_radius
    n = cfg.grids["transport"]
    x_grid = np.linspace(-R, R, n)
    _, ws = _sample_points(P, rng, 3, frac=0.25)
    ws = np.concatenate([np.zeros((1, P.m), dtype=complex), ws])
    err = max(transport.verify_momentum_is_transport(P, g, wi, x_grid) for wi in ws)
    rep.add("momentum_equals_transport", err, tol["transport"], orbits=len(ws), nodes=n)

    inner = min(6.0, R)
    xr = np.linspace(-inner, inner, n)
    worst = 0.0
    convex = True
    for wi in ws:
        src, tgt = transport.orbit_transport_pair(P, g, wi, xr, avg_grid=x_grid)
        u = transport.reconstruct_potential(src, tgt, 0.0)
        ref = P.value(xr[:, None], np.broadcast_to(wi, (n, P.m)))
        worst = max(worst, transport.compare_up_to_constant(u, ref, wi).sup_error)
        convex &= bool(np.all(np.diff(u.values, 2) >= -1e-10))
        if not np.any(wi):
            src.to_csv(out_dir / "conditional_w0.csv")
    rep.add("reconstruction_up_to_constant", worst, tol["reconstruction"], window=[-inner, inner])
    rep.add("reconstruction_convex", 0.0, 1.0, passed=convex)

    w_set = [wi for wi in ws if np.all(np.abs(wi) <= 1.0)]
    u = transport.uniqueness_experiment(P, g, w_set, x_grid)
    rep.add("offset_conditionals", u.offset_density_diff, tol["uniqueness"])
    rep.add("offset_momentum", u.offset_momentum_diff, tol["uniqueness"])
    rep.add("anchor_difference_variance", u.offset_reconstruction_spread, tol["uniqueness"])
    rep.add("weight_scaling_conditionals", u.weight_scaling_diff, tol["uniqueness"])
    rep.add("competitor_gap", u.density_gap, 0.05, passed=u.density_gap >= 0.05, competitor=u.competitor)

    bad = 0
    for _ in range(cfg.grids["ot_trials"]):
        size = int(rng.integers(1, transport.MAX_OT_POINTS + 1))
        a, b = rng.standard_normal(size), rng.standard_normal(size)
        assign, _ = transport.discrete_ot_oracle(a, b)
        sorted_assign = np.empty(size, dtype=int)
        sorted_assign[np.argsort(a)] = np.argsort(b)
        bad += int(not np.array_equal(assign, sorted_assign))
    rep.add("discrete_ot_sorted", bad, 0.5, trials=cfg.grids["ot_trials"], failures=bad)
    return rep


SUITE_RUNNERS = {
    "verify-minors": suite_minors,
    "verify-legendre": suite_legendre,
    "verify-factorization": suite_factorization,
    "verify-disintegration": suite_disintegration,
    "verify-transport": suite_transport,
}


def run(cfg: RunConfig) -> tuple:
    """Run the configured suites; return ``(report_dict, timings, exit_code)``.

    Each suite draws from its own generator seeded by ``(seed, suite index)``
    so reports do not depend on which other suites run.
    """
    cfg.output.mkdir(parents=True, exist_ok=True)
    suites, timings = [], {}
    for name in cfg.suites:
        rng = np.random.default_rng([cfg.seed, SUITES.index(name)])
        t0 = time.perf_counter()
        try:
            rep = SUITE_RUNNERS[name](cfg, rng, cfg.output)
        except ToruslabError as exc:
            rep = SuiteReport(name)
            rep.add("suite_error", float("inf"), 0.0, passed=False, error_type=type(exc).__name__, message=str(exc))
        rep.wall_time = time.perf_counter() - t0
        timings[name] = rep.wall_time
        suites.append(rep)
    overall = all(s.passed for s in suites)
    report = {
        "schema": SCHEMA_VERSION,
        "pass": overall,
        "seed": cfg.seed,
        "config": _clean(cfg.as_dict()),
        "suites": [s.as_dict() for s in suites],
    }
    return report, timings, 0 if overall else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toruslab", description="Run toruslab verification suites.")
    parser.add_argument("suite", nargs="?", choices=SUITES + ("all",),
                        help="suite to run (overrides the config's 'suite' key)")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="random seed (overrides the config)")
    parser.add_argument("--out", help="output directory for report.json, timing.json and CSV dumps")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.suite, args.seed, args.out)
    except ConfigError as exc:
        print(f"toruslab: config error: {exc}", file=sys.stderr)
        return 2
    report, timings, code = run(cfg)
    (cfg.output / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    (cfg.output / "timing.json").write_text(json.dumps(timings, indent=2) + "\n", encoding="utf-8")
    for s in report["suites"]:
        print(f"{s['suite']:<24} {'PASS' if s['pass'] else 'FAIL'}")
        for r in s["records"]:
            if not r["pass"]:
                print(f"    {r['name']}: error {r['error']} > tol {r['tol']}")
    print(f"report: {cfg.output / 'report.json'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
