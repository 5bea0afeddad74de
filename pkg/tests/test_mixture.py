import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from covaroc.basis import BasisSet, design_matrix
from covaroc.errors import MalformedInputError
from covaroc.mixture import (MixtureParams, PriorSpec, cdf, components_at, initial_params,
                             locations_at, log_density, log_density_grad, sample, weights_at)

from conftest import random_params


def fd_grad(f, theta, h=1e-6):
    g = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h * max(1.0, abs(theta[k]))
        g[k] = (f(theta + e) - f(theta - e)) / (2 * e[k])
    return g


def rel_err(a, b):
    """Componentwise |a - b| / max(|a|, |b|, 1)."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)


def test_weights_examples():
    p1 = MixtureParams([[0.3, -2.0]], [[0.0, 0.0]], [0.0])
    assert weights_at(p1, [0.7, 1.0]).tolist() == [1.0]
    same = MixtureParams([[0.5, 1.0]] * 3, np.zeros((3, 2)), np.zeros(3))
    np.testing.assert_allclose(weights_at(same, [0.2, 1.0]), [1 / 3] * 3, rtol=1e-15)
    p2 = MixtureParams([[0.0], [math.log(3)]], np.zeros((2, 1)), np.zeros(2))
    np.testing.assert_allclose(weights_at(p2, [1.0]), [0.25, 0.75], rtol=1e-14)


def test_locations_examples():
    assert locations_at(MixtureParams(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros(2)),
                        [0.2, 0.3, 1.0]).tolist() == [0.0, 0.0]
    const_only = MixtureParams(np.zeros((2, 3)), [[0, 0, 1.5], [0, 0, -2.0]], np.zeros(2))
    for phi in ([0.1, 0.9, 1.0], [0.0, 0.0, 1.0]):
        assert locations_at(const_only, phi).tolist() == [1.5, -2.0]
    b = BasisSet(np.zeros((1, 1)), 1.0, [True])
    phi = design_matrix(b, [[0.0]])[0]
    p = MixtureParams(np.zeros((1, 2)), [[2.0, 0.25]], [0.0])
    assert locations_at(p, phi)[0] == 2.0 * 1.0 + 0.25


def test_log_density_examples():
    std = MixtureParams([[0.0]], [[0.0]], [0.0])
    assert log_density(std, 0.0, [1.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert log_density(std, 0.0, [1.0]) == pytest.approx(-0.918939, abs=1e-6)
    twin = MixtureParams([[0.0], [0.0]], [[0.0], [0.0]], [0.0, 0.0])
    for y in (-2.0, 0.3, 4.0):
        assert log_density(twin, y, [1.0]) == pytest.approx(log_density(std, y, [1.0]), abs=1e-14)
    p = MixtureParams([[math.log(0.3)], [math.log(0.7)]], [[-1.0], [2.0]], [0.0, math.log(0.5)])
    direct = 0.3 * stats.norm.pdf(0.5, -1, 1) + 0.7 * stats.norm.pdf(0.5, 2, 0.5)
    assert log_density(p, 0.5, [1.0]) == pytest.approx(math.log(direct), rel=1e-13)
    with pytest.raises(MalformedInputError):
        log_density(std, float("nan"), [1.0])
    with pytest.raises(MalformedInputError):
        log_density(std, 0.0, [1.0, 2.0])


def test_gradient_examples():
    p = MixtureParams([[0.0, 0.0]], [[0.0, 1.3]], [0.4])
    g = log_density_grad(p, 1.3, [0.0, 1.0])
    assert g.w_locations[0, 1] == 0.0
    assert g.log_sigmas[0] == pytest.approx(-1.0, abs=1e-15)
    assert np.all(g.w_weights == 0.0)


def _fd_check(p, y, phi):
    H, F = p.H, p.n_features
    f = lambda t: log_density(MixtureParams.unflatten(t, H, F), y, phi)
    analytic = log_density_grad(p, y, phi).flatten()
    return rel_err(analytic, fd_grad(f, p.flatten()))


def test_gradient_random_instance(rng):
    p = random_params(rng, 3, 5)
    phi = np.append(rng.random(4), 1.0)
    assert _fd_check(p, 0.4, phi).max() < 1e-5


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(0, 9), st.integers(0, 2**32 - 1))
def test_gradient_property(H, K, seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, H, K + 1)
    phi = np.append(rng.random(K), 1.0)
    y = float(locations_at(p, phi).mean() + rng.standard_normal())
    assert _fd_check(p, y, phi).max() < 1e-5


def test_sample_examples():
    tight = MixtureParams([[0.0]], [[2.5]], [math.log(1e-8)])
    assert np.max(np.abs(sample(tight, [1.0], 1000, 0) - 2.5)) < 1e-6
    std = MixtureParams([[0.0]], [[0.0]], [0.0])
    x = sample(std, [1.0], 100_000, 1)
    assert abs(x.mean()) < 0.02 and abs(x.std() - 1) < 0.02
    assert np.array_equal(sample(std, [1.0], 50, 7), sample(std, [1.0], 50, 7))


def test_cdf_examples():
    std = MixtureParams([[0.0]], [[0.0]], [0.0])
    assert cdf(std, [1.0], -40.0) <= 1e-300
    assert cdf(std, [1.0], 0.0) == 0.5
    mix = MixtureParams([[0.0], [0.0]], [[0.0], [2.0]], [0.0, 0.0])
    assert cdf(mix, [1.0], 1.0) == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(0, 6), st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_weights_simplex_and_shift(H, K, seed, shift):
    rng = np.random.default_rng(seed)
    p = random_params(rng, H, K + 1, scale=3.0)
    phi = np.append(rng.random(K), 1.0)
    w = weights_at(p, phi)
    assert abs(w.sum() - 1) < 1e-12 and np.all(w >= 0)
    shifted = MixtureParams(p.w_weights + np.append(np.zeros(K), shift), p.w_locations,
                            p.log_sigmas)
    np.testing.assert_allclose(weights_at(shifted, phi), w, rtol=1e-10, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_cdf_monotone_limits_and_mass(H, seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, H, 3)
    phi = np.append(rng.random(2), 1.0)
    mu, s = locations_at(p, phi), p.sigmas
    lo, hi = mu.min() - 40 * s.max(), mu.max() + 40 * s.max()
    ys = np.linspace(lo, hi, 400)
    c = np.array([cdf(p, phi, y) for y in ys])
    assert np.all(np.diff(c) >= 0)
    assert c[0] < 1e-300 and c[-1] > 1 - 1e-12
    grid = np.linspace(mu.min() - 10 * s.max(), mu.max() + 10 * s.max(), 10_000)
    dens = np.exp([log_density(p, y, phi) for y in grid])
    assert abs(np.trapezoid(dens, grid) - 1) < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_permutation_invariance(H, seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, H, 4)
    q = p.permuted(rng.permutation(H))
    phi = np.append(rng.random(3), 1.0)
    for y in rng.standard_normal(5) * 2:
        assert log_density(q, y, phi) == pytest.approx(log_density(p, y, phi), abs=1e-12)
        assert cdf(q, phi, y) == pytest.approx(cdf(p, phi, y), abs=1e-12)


def test_initial_params():
    y = np.arange(100.0)
    p = initial_params(y, 4, 3)
    assert np.all(p.w_weights == 0) and np.all(p.w_locations[:, :2] == 0)
    np.testing.assert_allclose(p.w_locations[:, 2], np.quantile(y, [0.125, 0.375, 0.625, 0.875]))
    np.testing.assert_allclose(p.sigmas, y.std() / 4)


def test_components_match_scalar_calls(rng):
    draws = [random_params(rng, 3, 4) for _ in range(5)]
    phis = np.column_stack([rng.random((6, 3)), np.ones(6)])
    pi, mu, sigma = components_at(draws, phis)
    assert pi.shape == (5, 6, 3)
    for d, g in ((0, 0), (4, 5), (2, 3)):
        np.testing.assert_allclose(pi[d, g], weights_at(draws[d], phis[g]), rtol=1e-13)
        np.testing.assert_allclose(mu[d, g], locations_at(draws[d], phis[g]), rtol=1e-13)
        np.testing.assert_allclose(sigma[d, g], draws[d].sigmas)


def test_prior_density():
    prior = PriorSpec(2.0, -1.0, 0.5)
    p = MixtureParams([[0.5, -1.0]], [[2.0, 0.0]], [-0.25])
    expect = (stats.norm.logpdf([0.5, -1.0, 2.0, 0.0], 0, 2.0).sum()
              + stats.norm.logpdf(-0.25, -1.0, 0.5))
    assert prior.log_density(p) == pytest.approx(expect, rel=1e-14)
    f = lambda t: prior.log_density_flat(t, 1)[0]
    np.testing.assert_allclose(prior.log_density_flat(p.flatten(), 1)[1], fd_grad(f, p.flatten()),
                               rtol=1e-7, atol=1e-8)


def test_serialization_round_trip(rng):
    p = random_params(rng, 3, 4)
    back = MixtureParams.from_dict(p.to_dict())
    assert np.array_equal(back.flatten(), p.flatten())
