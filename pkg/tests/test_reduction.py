import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toruslab.errors import DomainError
from toruslab.potentials import ProjectiveModel, QuadraticSeparable, make_potential, mixed_hessian
from toruslab.reduction import (
    minor_expansion_crosscheck,
    momentum_map,
    reduced_form,
    reduced_form_at,
    verify_factorization,
)
from toruslab.measures import trapezoid_weights

CASES = [(1, 1), (1, 2), (2, 1), (2, 2)]


def _points(k, m, n, seed, xr=2.5, wr=1.0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-xr, xr, size=(n, k))
    w = wr * np.sqrt(rng.uniform(size=(n, m))) * np.exp(2j * np.pi * rng.uniform(size=(n, m)))
    return x, w


def test_momentum_map_values():
    np.testing.assert_allclose(momentum_map(QuadraticSeparable(k=2), [0.3, -0.7]), [0.3, -0.7])
    assert momentum_map(ProjectiveModel(k=1, m=1), [0.0], [0.0])[0] == pytest.approx(1.0)


def test_momentum_map_monotone_k1():
    x = np.linspace(-6, 6, 401)[:, None]
    m = momentum_map(ProjectiveModel(k=1, m=1), x, np.full((401, 1), 0.4 + 0.2j))[:, 0]
    assert np.all(np.diff(m) > 0)


def test_reduced_form_quadratic():
    rf = reduced_form(QuadraticSeparable(k=1, m=2), [0.2], [0.1, -0.3j])
    np.testing.assert_allclose(rf.sigma, np.eye(2), atol=1e-14)
    assert rf.sigma_m == pytest.approx(1.0)
    rf1 = reduced_form(QuadraticSeparable(k=1, m=1), [0.2], [0.1])
    assert rf1.sigma_m == pytest.approx(-1.0)


def test_reduced_form_projective_q1():
    rf = reduced_form(ProjectiveModel(k=1, m=1), [1.0], [0.0])
    assert rf.sigma[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert rf.sigma_m == pytest.approx(-0.5, abs=1e-12)
    assert rf.volume == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("q", [0.3, 1.0, 1.6])
@pytest.mark.parametrize("w", [0.0, 0.5j, 1.0 - 0.7j])
def test_reduced_form_projective_closed_form(q, w):
    rf = reduced_form(ProjectiveModel(k=1, m=1), [q], [w])
    assert rf.sigma[0, 0].real == pytest.approx((1 - q / 2) / (1 + abs(w) ** 2) ** 2, abs=1e-12)


def test_reduced_form_at_agrees_with_newton_path():
    P = ProjectiveModel(k=2, m=2)
    x, w = _points(2, 2, 20, seed=4)
    a = reduced_form_at(P, x, w)
    b = reduced_form(P, momentum_map(P, x, w), w, margin=None)
    np.testing.assert_allclose(a.sigma, b.sigma, atol=1e-12)


def test_irregular_value_rejected():
    P = make_potential("projective_model", 2, 1, x_radius=8)
    x = np.array([7.9, -7.9])
    with pytest.raises(DomainError):
        reduced_form(P, momentum_map(P, x, [0.0]), [0.0], margin=None)


@given(st.floats(0.05, 1.95), st.complex_numbers(max_magnitude=1.5))
@settings(max_examples=60, deadline=None)
def test_sigma_positive_definite(q, w):
    rf = reduced_form(ProjectiveModel(k=1, m=1), [q], [w])
    assert np.all(np.linalg.eigvalsh(rf.sigma) > 0)


def test_reduced_volume_integrates_linearly_in_q():
    P = ProjectiveModel(k=1, m=1)
    R = 1.5
    r = np.linspace(0, R, 401)
    th = np.linspace(0, 2 * np.pi, 65)[:-1]
    rr, tt = np.meshgrid(r, th, indexing="ij")
    w = (rr * np.exp(1j * tt)).ravel()[:, None]
    weights = (np.outer(trapezoid_weights(r) * r, np.full(len(th), 2 * np.pi / len(th)))).ravel()
    ratios = []
    for q in (0.2, 0.7, 1.0, 1.5, 1.9):
        rf = reduced_form(P, np.full((len(w), 1), q), w)
        ratios.append(float(weights @ rf.volume) / (1 - q / 2))
    exact = np.pi * R**2 / (1 + R**2)
    np.testing.assert_allclose(ratios, exact, rtol=1e-4)


# -- factorisation -----------------------------------------------------------

def test_factorization_quadratic():
    r = verify_factorization(QuadraticSeparable(k=2, m=1), [0.1, 0.2], [0.3j])
    assert r.lhs == pytest.approx(1) and r.rhs == pytest.approx(1) and r.schur == pytest.approx(1)
    assert r.passed


def test_factorization_projective_origin():
    r = verify_factorization(ProjectiveModel(k=1, m=1), [0.0], [0.0])
    assert abs(r.lhs - 0.5) <= 1e-10 and abs(r.rhs - 0.5) <= 1e-10
    assert r.passed


@pytest.mark.parametrize("k, m", CASES)
@pytest.mark.parametrize("mode, tol", [("analytic", 1e-8), ("fd", 1e-5)])
def test_factorization_three_way(k, m, mode, tol):
    P = make_potential("projective_model", k, m, derivative_mode=mode)
    x, w = _points(k, m, 100, seed=10 * k + m)
    for xi, wi in zip(x, w):
        r = verify_factorization(P, xi, wi, tol=tol)
        assert r.passed, r.rel_errors


def test_factorization_k3():
    P = ProjectiveModel(k=3, m=1)
    x, w = _points(3, 1, 20, seed=1, xr=1.5)
    assert all(verify_factorization(P, xi, wi).passed for xi, wi in zip(x, w))


@given(st.integers(1, 3), st.integers(1, 2), st.data())
@settings(max_examples=40, deadline=None)
def test_det_hess_xx_positive(k, m, data):
    P = ProjectiveModel(k=k, m=m)
    x = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=k, max_size=k)))
    w = np.array(data.draw(st.lists(st.complex_numbers(max_magnitude=1.4), min_size=m, max_size=m)))
    assert np.linalg.det(mixed_hessian(P, x, w).hess_xx) > 0


@pytest.mark.parametrize("k, m", [(1, 1), (2, 2), (2, 3), (3, 2)])
def test_minor_expansion_crosscheck(k, m):
    P = ProjectiveModel(k=k, m=m)
    x, w = _points(k, m, 3, seed=k + 7 * m, xr=1.5, wr=0.8)
    for xi, wi in zip(x, w):
        assert minor_expansion_crosscheck(P, xi, wi) <= 1e-8


def test_minor_expansion_m1_direct_formula():
    P = ProjectiveModel(k=2, m=1)
    x, w = np.array([0.4, -0.2]), np.array([0.3 + 0.1j])
    mh = mixed_hessian(P, x, w)
    B, C, H = mh.coupling, mh.hess_wwbar, mh.hess_xx
    direct = -C[0, 0] + (mh.coupling_adjoint @ np.linalg.solve(H, B))[0, 0]
    rf = reduced_form(P, momentum_map(P, x, w), w, margin=None)
    assert abs(direct - rf.sigma_m) <= 1e-10
    assert minor_expansion_crosscheck(P, x, w) <= 1e-10


def test_minor_expansion_quadratic():
    assert minor_expansion_crosscheck(QuadraticSeparable(k=2, m=2), [0.1, 0.2], [0.1j, 0.3]) <= 1e-14


def test_crosscheck_size_limit():
    with pytest.raises(ValueError):
        minor_expansion_crosscheck(ProjectiveModel(k=4, m=1), np.zeros(4), [0.0])
