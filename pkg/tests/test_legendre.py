import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toruslab.errors import DomainError
from toruslab.legendre import (
    GridFunction1D,
    conjugate_at,
    conjugate_w_derivative_identity_check,
    conjugate_w_hessian,
    discrete_llt,
    grad_p_conjugate,
    moment_image,
    moment_interval,
    wirtinger_hessian_fd,
)
from toruslab.potentials import ProjectiveModel, QuadraticSeparable, ToricFubiniStudy, make_potential


def projective_conjugate(p, w):
    t = 1 + abs(w) ** 2
    return 0.5 * p * np.log(p * t / (2 - p)) - np.log(2 * t / (2 - p))


def projective_argmax(p, w):
    return 0.5 * np.log(p * (1 + abs(w) ** 2) / (2 - p))


def test_quadratic_self_dual():
    P = QuadraticSeparable(k=2, m=1)
    p = np.array([0.7, -1.3])
    cp = conjugate_at(P, p, [0.4j])
    np.testing.assert_allclose(cp.argmax_x, p, atol=1e-12)
    assert cp.value == pytest.approx(0.5 * p @ p - 0.16, abs=1e-12)


@pytest.mark.parametrize("P", [ToricFubiniStudy(k=1), ProjectiveModel(k=1, m=1)], ids=["toric", "projective"])
def test_conjugate_at_p1(P):
    cp = conjugate_at(P, [1.0])
    assert abs(cp.argmax_x[0]) <= 1e-12
    assert abs(cp.value + np.log(2)) <= 1e-10
    assert cp.residual <= 1e-10


@pytest.mark.parametrize("p, w", [(0.3, 0.0), (1.2, 0.5 - 0.3j), (1.8, 1.1j), (0.05, 0.2)])
def test_projective_conjugate_closed_form(p, w):
    P = ProjectiveModel(k=1, m=1)
    cp = conjugate_at(P, [p], [w])
    assert cp.value == pytest.approx(projective_conjugate(p, w), abs=1e-10)
    assert grad_p_conjugate(P, [p], [w])[0] == pytest.approx(projective_argmax(p, w), abs=1e-10)


def test_grad_p_conjugate_quadratic_and_origin():
    np.testing.assert_allclose(grad_p_conjugate(QuadraticSeparable(k=2), [0.2, -0.4]), [0.2, -0.4], atol=1e-12)
    assert abs(grad_p_conjugate(ProjectiveModel(k=1, m=1), [1.0], [0.0])[0]) <= 1e-12


@given(
    st.integers(1, 2), st.integers(0, 2),
    st.lists(st.floats(-3, 3), min_size=2, max_size=2),
    st.lists(st.complex_numbers(max_magnitude=1.0), min_size=2, max_size=2),
)
@settings(max_examples=60, deadline=None)
def test_round_trip_and_young(k, m, xs, ws):
    P = ProjectiveModel(k=k, m=m)
    x = np.array(xs[:k])
    w = np.array(ws[:m], dtype=complex)
    p = P.gradient_x(x, w)
    cp = conjugate_at(P, p, w, margin=None)
    assert np.max(np.abs(P.gradient_x(cp.argmax_x, w) - p)) <= 1e-8
    assert abs(P.value(x, w) + cp.value - x @ p) <= 1e-10 * (1 + abs(P.value(x, w)))


def test_margin_rejects_boundary_momenta():
    P = ProjectiveModel(k=1, m=1)
    with pytest.raises(DomainError):
        conjugate_at(P, [2.0], [0.0])
    with pytest.raises(DomainError):
        conjugate_at(P, [-0.1], [0.0])


def test_w_identity_quadratic_zero():
    assert conjugate_w_derivative_identity_check(QuadraticSeparable(k=1, m=1), [0.5], [0.3j]) <= 1e-12


def test_w_identity_projective_k1():
    assert conjugate_w_derivative_identity_check(ProjectiveModel(k=1, m=1), [1.0], [0.4]) <= 1e-5


def test_w_identity_projective_k2():
    rng = np.random.default_rng(5)
    P = ProjectiveModel(k=2, m=1)
    x = rng.uniform(-2, 2, 2)
    w = np.array([0.3 - 0.5j])
    assert conjugate_w_derivative_identity_check(P, P.gradient_x(x, w), w, margin=None) <= 1e-5


def test_conjugate_w_hessian_quadratic():
    np.testing.assert_allclose(conjugate_w_hessian(QuadraticSeparable(k=1, m=2), [0.3], [0.1, 0.2j]),
                               -np.eye(2), atol=1e-14)


@pytest.mark.parametrize("p, w", [(1.0, 0.0), (0.4, 0.6j), (1.7, -0.8 + 0.2j)])
def test_conjugate_w_hessian_projective_closed_form(p, w):
    t = 1 + abs(w) ** 2
    H = conjugate_w_hessian(ProjectiveModel(k=1, m=1), [p], [w])
    assert H[0, 0] == pytest.approx((p / 2 - 1) / t**2, abs=1e-12)


@pytest.mark.parametrize("family, k, m", [("projective_model", 1, 1), ("projective_model", 2, 2),
                                          ("quadratic_separable", 2, 1)])
def test_conjugate_w_hessian_matches_fd(family, k, m):
    P = make_potential(family, k, m)
    rng = np.random.default_rng(k + m)
    x = rng.uniform(-1, 1, k)
    w = 0.5 * (rng.uniform(-1, 1, m) + 1j * rng.uniform(-1, 1, m))
    p = P.gradient_x(x, w)
    fd = wirtinger_hessian_fd(lambda ww: conjugate_at(P, np.broadcast_to(p, ww.shape[:-1] + (k,)), ww,
                                                      margin=None).value, w)
    np.testing.assert_allclose(conjugate_w_hessian(P, p, w, margin=None), fd, atol=1e-4)


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       st.lists(st.complex_numbers(max_magnitude=1.5), min_size=2, max_size=2))
@settings(max_examples=50, deadline=None)
def test_conjugate_w_hessian_negative_definite(xs, ws):
    P = ProjectiveModel(k=2, m=2)
    x, w = np.array(xs), np.array(ws, dtype=complex)
    H = conjugate_w_hessian(P, P.gradient_x(x, w), w, margin=None)
    assert np.all(np.linalg.eigvalsh(H) < 0)


# -- discrete transform ------------------------------------------------------

def test_llt_quadratic():
    x = np.linspace(-3, 3, 241)
    out = discrete_llt(GridFunction1D(x, 0.5 * x**2))
    h = x[1] - x[0]
    assert np.max(np.abs(out.values - 0.5 * out.nodes**2)) <= h**2 / 8 + 1e-14


def test_llt_matches_newton_conjugate():
    x = np.linspace(-6, 6, 513)
    P = ToricFubiniStudy(k=1)
    out = discrete_llt(GridFunction1D(x, np.log1p(np.exp(2 * x))), slopes=np.linspace(0.05, 1.95, 513))
    ref = conjugate_at(P, out.nodes[:, None]).value
    assert np.max(np.abs(out.values - ref)) <= 1e-3


def test_llt_shift_rule():
    x = np.linspace(-2, 2, 101)
    f = np.cosh(x)
    s = np.linspace(-3.0, 3.0, 61)
    a = discrete_llt(GridFunction1D(x, f), slopes=s)
    b = discrete_llt(GridFunction1D(x, f + 3.25), slopes=s)
    np.testing.assert_allclose(b.values, a.values - 3.25, rtol=0, atol=1e-12)


def test_llt_biconjugation():
    x = np.linspace(-2, 2, 401)
    f = np.exp(x) + 0.5 * x**2
    chord = np.diff(f) / np.diff(x)
    star = discrete_llt(GridFunction1D(x, f), slopes=np.linspace(chord[0], chord[-1], 801))
    inner = x[40:-40]
    back = discrete_llt(star, slopes=inner)
    h, hs = x[1] - x[0], star.nodes[1] - star.nodes[0]
    curv = np.max(np.exp(x) + 1)
    bound = 2 * (curv * h**2 / 8 + hs**2 / 8)
    assert np.max(np.abs(back.values - f[40:-40])) <= bound


def test_llt_rejects_nonconvex():
    x = np.linspace(-1, 1, 11)
    with pytest.raises(ValueError):
        discrete_llt(GridFunction1D(x, np.sin(3 * x)))


# -- moment image --------------------------------------------------------------

def test_toric_interval():
    P = ToricFubiniStudy(k=1)
    lo, hi = moment_interval(P)
    s = np.exp(12.0)
    assert lo == pytest.approx(2 / (1 + s), rel=1e-12)
    assert hi == pytest.approx(2 * s / (1 + s), rel=1e-15)
    img = moment_image(P)
    assert img.hull[0] == pytest.approx(lo) and img.hull[1] == pytest.approx(hi)
    assert 0 < lo < hi < 2


@pytest.mark.parametrize("k", [1, 2])
def test_quadratic_box_image(k):
    P = QuadraticSeparable(k=k, m=0, box=1.0)
    img = moment_image(P)
    if k == 1:
        np.testing.assert_allclose(img.hull, [-1, 1])
    else:
        corners = np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]])
        assert img.contains(corners).all()
        assert not img.contains([[1.01, 0.0]]).any()
        assert sorted(map(tuple, np.round(img.hull, 12))) == sorted(map(tuple, corners.astype(float)))


def test_projective_k2_midpoints_in_hull():
    P = ProjectiveModel(k=2, m=1)
    img = moment_image(P, [0.3j], np.linspace(-4, 4, 17))
    rng = np.random.default_rng(0)
    i, j = rng.integers(0, len(img.samples), size=(2, 200))
    mids = 0.5 * (img.samples[i] + img.samples[j])
    assert img.contains(mids, tol=1e-12).all()
    assert img.contains(img.samples, tol=1e-12).all()
