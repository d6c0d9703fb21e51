import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toruslab.errors import ConsistencyError, TruncationError
from toruslab.measures import (
    TestFunction as Integrand,
    WeightFunction,
    average_density,
    check_disintegration,
    check_normalization,
    conditional_density,
    default_test_functions,
    dh_pushforward,
    ma_density,
    orbit_density,
    sample_orbit,
)
from toruslab.potentials import QuadraticSeparable, make_potential

X8 = np.linspace(-8, 8, 2049)
ONE = WeightFunction.constant()


@pytest.fixture(scope="module")
def proj():
    return make_potential("projective_model", 1, 1, x_radius=8, w_radius=3)


@pytest.fixture(scope="module")
def box():
    return QuadraticSeparable(k=1, m=1, box=1.0)


def test_ma_density_quadratic(box):
    np.testing.assert_allclose(ma_density(box, ONE, np.linspace(-1, 1, 5)[:, None], np.zeros((5, 1))), 1.0)


def test_ma_density_projective(proj):
    x = np.linspace(-3, 3, 13)
    s = np.exp(2 * x)
    vals = ma_density(proj, ONE, x[:, None], np.zeros((13, 1)))
    np.testing.assert_allclose(vals, 4 * s / (1 + s) ** 3, rtol=1e-12)
    assert ma_density(proj, ONE, [0.0], [0.0]) == pytest.approx(0.5)


def test_ma_density_exp_weight(proj):
    g = WeightFunction.exp_affine([1.0])
    assert ma_density(proj, g, [0.0], [0.0]) == pytest.approx(np.e / 2, rel=1e-14)


def test_average_density_projective_w0(proj):
    assert abs(average_density(proj, ONE, [0.0], X8) - 1.0) <= 1e-6


def test_average_density_box(box):
    assert average_density(box, ONE, [0.2j], np.linspace(-1, 1, 65)) == pytest.approx(2.0, abs=1e-14)


@pytest.mark.parametrize("w", [0.5, 0.3 - 0.6j, 1.2j])
def test_average_density_closed_form(proj, w):
    assert average_density(proj, ONE, [w], X8) == pytest.approx(1 / (1 + abs(w) ** 2) ** 2, rel=1e-6)


def test_average_density_stack(proj):
    W = np.array([[0.0], [0.5], [1.0j]])
    mu = average_density(proj, ONE, W, X8)
    assert mu.shape == (3,)
    np.testing.assert_allclose(mu, 1 / (1 + np.abs(W[:, 0]) ** 2) ** 2, rtol=1e-6)


def test_truncation_detected(proj):
    with pytest.raises(TruncationError):
        average_density(proj, ONE, [0.0], np.linspace(-4, 4, 513))


def test_conditional_at_origin(proj):
    eta = conditional_density(proj, ONE, [0.0], [0.0], x_grid=X8)
    assert abs(eta[0] - 0.5) <= 1e-6


def test_conditional_projective_w0_closed_form(proj):
    x = np.linspace(-4, 4, 33)
    s = np.exp(2 * x)
    eta = conditional_density(proj, ONE, [0.0], x, mu_hat=1.0)
    np.testing.assert_allclose(eta, 4 * s / (1 + s) ** 3, rtol=1e-10)


def test_conditional_box_uniform(box):
    eta = conditional_density(box, ONE, [0.1], np.linspace(-1, 1, 9), x_grid=np.linspace(-1, 1, 65))
    np.testing.assert_allclose(eta, 0.5, atol=1e-14)


@pytest.mark.parametrize("w", [0.0, 0.4, 0.3 + 0.9j, -1.5j, 2.0])
def test_conditional_times_average_is_ma(proj, w):
    x = np.linspace(-6, 6, 41)
    mu = average_density(proj, ONE, [w], X8)
    eta = conditional_density(proj, ONE, [w], x, mu_hat=mu)
    ma = ma_density(proj, ONE, x[:, None], np.full((41, 1), w))
    np.testing.assert_allclose(eta * mu, ma, rtol=1e-8)


def test_normalization(proj, box):
    assert check_normalization(proj, ONE, [0.0], X8) <= 1e-6
    assert check_normalization(box, ONE, [0.0], np.linspace(-1, 1, 65)) <= 1e-14
    assert check_normalization(proj, WeightFunction.exp_affine([1.0]), [0.7], X8) <= 1e-5


@given(st.floats(0.1, 10.0), st.complex_numbers(max_magnitude=2.0))
@settings(max_examples=30, deadline=None)
def test_weight_scaling_leaves_conditional_unchanged(c, w):
    P = make_potential("projective_model", 1, 1, x_radius=8, w_radius=3)
    x = np.linspace(-5, 5, 21)
    grid = np.linspace(-8, 8, 513)
    a = conditional_density(P, ONE, [w], x, x_grid=grid)
    b = conditional_density(P, ONE.scaled(c), [w], x, x_grid=grid)
    assert np.max(np.abs(a - b)) <= 1e-12


def test_disintegration_projective_small_grid(proj):
    reps = check_disintegration(proj, ONE, None, np.linspace(-8, 8, 513), np.linspace(-2, 2, 33))
    assert len(reps) == len(default_test_functions())
    for r in reps:
        assert r.error <= 1e-4, r.test_function
    one = next(r for r in reps if r.test_function == "one")
    assert one.lhs == pytest.approx(one.rhs, abs=1e-12)


def test_disintegration_w_only_function(proj):
    f = Integrand("exp(-|w|^2)", lambda x, w: np.exp(-np.abs(w[..., 0]) ** 2) + 0 * x[..., 0])
    (r,) = check_disintegration(proj, ONE, [f], np.linspace(-8, 8, 513), np.linspace(-2, 2, 33))
    assert abs(r.lhs - r.rhs) <= 1e-10


def test_orbit_density_csv(tmp_path, proj):
    field = orbit_density(proj, ONE, [0.5 - 0.25j], np.linspace(-8, 8, 33))
    path = tmp_path / "orbit.csv"
    field.to_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["x_1", "re_w_1", "im_w_1", "value"]
    assert len(rows) == 34
    assert float(rows[1][1]) == 0.5 and float(rows[1][2]) == -0.25


# -- pushforward ------------------------------------------------------------

def test_dh_pushforward_projective(proj):
    dh = dh_pushforward(proj, ONE, [0.0], X8)
    p = dh.axes[0]
    assert np.max(np.abs(dh.values - (1 - p / 2))) <= 1e-3
    assert abs(dh.mass() - 1.0) <= 1e-6
    assert np.all(dh.values[1:-1] > 0)
    assert dh.info["max_rel_discrepancy"] <= 1e-8


def test_dh_pushforward_box_uniform(box):
    dh = dh_pushforward(box, ONE, [0.0], np.linspace(-1, 1, 65), p_grid=np.linspace(-0.99, 0.99, 33))
    np.testing.assert_allclose(dh.values, 0.5, atol=1e-12)


def test_dh_pushforward_exp_weight(proj):
    g = WeightFunction.exp_affine([1.0])
    dh = dh_pushforward(proj, g, [0.3j], X8)
    assert abs(dh.mass() - 1.0) <= 1e-5


def test_dh_consistency_error_raised(proj):
    with pytest.raises(ConsistencyError):
        dh_pushforward(proj, ONE, [0.0], X8, rel_tol=1e-300)


def test_dh_histogram_within_three_sigma(proj):
    n = 100_000
    hist = dh_pushforward(proj, ONE, [0.0], X8, mode="histogram", n_samples=n, bins=20, seed=1)
    edges = hist.info["edges"][0]
    cell = (edges[1:] - edges[:-1]) * (1 - 0.25 * (edges[1:] + edges[:-1]))
    expected = n * cell / cell.sum()
    z = np.abs(hist.info["counts"] - expected) / np.sqrt(expected * (1 - expected / n))
    assert np.max(z) <= 3.0
    assert hist.info["counts"].sum() == n


def test_sample_orbit_inside_grid(proj):
    xs = sample_orbit(proj, ONE, [0.0], X8, 1000, np.random.default_rng(0))
    assert xs.shape == (1000, 1)
    assert np.all(np.abs(xs) <= 8)
    s = np.exp(2 * X8)
    dens = 4 * s / (1 + s) ** 3
    mean = np.trapezoid(X8 * dens, X8) / np.trapezoid(dens, X8)
    sd = np.sqrt(np.trapezoid((X8 - mean) ** 2 * dens, X8) / np.trapezoid(dens, X8))
    assert abs(np.mean(xs) - mean) <= 4 * sd / np.sqrt(len(xs))


def test_weight_validation():
    with pytest.raises(ValueError):
        WeightFunction.constant(0.0)
    with pytest.raises(ValueError):
        WeightFunction.table([0, 1], [1.0, -1.0])
    g = WeightFunction.table([0.0, 2.0], [1.0, 3.0])
    assert g(np.array([[1.0]]))[0] == pytest.approx(2.0)
