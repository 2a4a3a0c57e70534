import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbgam.family import NBFamily, nb_deviance, nb_logpmf, sample_nb, unit_deviance

from oracles import nb_logpmf_mp, poisson_logpmf


@pytest.mark.parametrize("y, mu, phi", [
    (0, 1.0, 0.5), (3, 2.5, 0.01), (17, 4.0, 3.0), (100, 50.0, 1e3),
    (5, 5.0, 1e7), (250, 1e-3, 2.0), (0, 400.0, 15.0), (1000, 900.0, 1e5),
])
def test_logpmf_against_mpmath(y, mu, phi):
    assert nb_logpmf(y, mu, phi) == pytest.approx(nb_logpmf_mp(y, mu, phi), rel=1e-11, abs=1e-11)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 500), st.floats(1e-3, 1e3), st.floats(1e-2, 1e8))
def test_logpmf_property_against_mpmath(y, mu, phi):
    ref = nb_logpmf_mp(y, mu, phi)
    assert abs(nb_logpmf(y, mu, phi) - ref) <= 1e-9 * max(1.0, abs(ref))


def test_poisson_limit_grid():
    # the exact gap to Poisson is ((y - mu)**2 - y) / (2 phi) to first order
    phi = 1e9
    y = np.arange(101)
    for mu in np.linspace(0.01, 50, 60):
        got = nb_logpmf(y, mu, phi)
        ref = np.array([poisson_logpmf(int(v), mu) for v in y])
        gap = ((y - mu) ** 2 - y) / (2 * phi)
        assert np.max(np.abs(got - ref - gap)) < 1e-10
    for mu in (0.5, 5.0, 12.0):
        small = np.arange(int(mu) + 20)
        ref = np.array([poisson_logpmf(int(v), mu) for v in small])
        assert np.max(np.abs(nb_logpmf(small, mu, phi) - ref)) < 1e-6
    np.testing.assert_allclose(nb_logpmf(y, 3.0, math.inf),
                               [poisson_logpmf(int(v), 3.0) for v in y], atol=1e-12)


@pytest.mark.parametrize("mu, phi", [(0.3, 0.5), (5.0, 2.0), (40.0, 10.0), (20.0, 1e9)])
def test_pmf_normalization(mu, phi):
    y = np.arange(20000)
    total = math.fsum(np.exp(nb_logpmf(y, mu, phi)))
    assert abs(total - 1) < 1e-8


def test_deviance_hand_example():
    ll = lambda y, mu: nb_logpmf(y, mu, 3.0)
    assert nb_deviance([5], [2.0], 3.0) == pytest.approx(2 * (ll(5, 5.0) - ll(5, 2.0)), rel=1e-12)
    assert nb_deviance([0, 4], [1.0, 4.0], 3.0) == pytest.approx(2 * (0 - ll(0, 1.0)), rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 300), st.floats(1e-2, 500), st.floats(1e-2, 1e6))
def test_unit_deviance_nonnegative_zero_at_y(y, mu, phi):
    assert unit_deviance(y, mu, phi) >= -1e-9 * max(1, y)
    if y > 0:
        assert abs(unit_deviance(y, float(y), phi)) < 1e-9 * y


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 200), st.floats(0.05, 1e4))
def test_deviance_unimodal_in_mu(y, phi):
    mus = y * np.exp(np.linspace(-3, 3, 61))
    d = unit_deviance(np.full(61, y), mus, phi)
    i = int(np.argmin(d))
    assert np.all(np.diff(d[:i + 1]) <= 1e-9)
    assert np.all(np.diff(d[i:]) >= -1e-9)


def test_family_weights_and_variance():
    f = NBFamily(2.0)
    mu = np.array([0.5, 4.0])
    np.testing.assert_allclose(f.variance(mu), mu + mu ** 2 / 2)
    np.testing.assert_allclose(f.weights(mu), mu ** 2 / f.variance(mu))
    np.testing.assert_allclose(NBFamily(math.inf).weights(mu), mu)


@pytest.mark.parametrize("bad", [
    lambda: NBFamily(0.0),
    lambda: NBFamily(-1.0),
    lambda: nb_logpmf(1, 0.0, 1.0),
    lambda: nb_logpmf(1, 1.0, -2.0),
    lambda: nb_logpmf(-1, 1.0, 2.0),
    lambda: nb_deviance([1, 2], [1.0], 2.0),
])
def test_invalid_arguments(bad):
    with pytest.raises(ValueError):
        bad()


def test_sampler_moments():
    rng = np.random.default_rng(7)
    draws = sample_nb(np.full(200000, 6.0), 3.0, rng)
    assert draws.mean() == pytest.approx(6.0, rel=0.02)
    assert draws.var() == pytest.approx(6.0 + 36 / 3, rel=0.03)
