import numpy as np
import pytest
from scipy.special import xlogy

from conftest import random_dataset, random_params
from hemppcat.estep import (
    estep,
    expected_complete_loglik,
    posterior_gram,
    posterior_mean,
    posterior_second_moment,
)
from hemppcat.likelihood import observed_log_likelihood
from hemppcat.model import Dataset, ModelParams


def _dense_conditional(y, g, j, params):
    """z | y under the joint Gaussian of (z, y), via the d x d covariance."""
    F, mu, v = params.F[j], params.mu[j], params.v[g]
    C = F @ F.T + v * np.eye(F.shape[0])
    gain = np.linalg.solve(C, F).T  # F^T C^{-1}
    return gain @ (y - mu), np.eye(F.shape[1]) - gain @ F


def test_gram_examples(rng):
    params = ModelParams(np.zeros((1, 5, 2)), np.zeros((1, 5)), [0.7], [1.0])
    np.testing.assert_array_equal(posterior_gram(0, 0, params), 0.7 * np.eye(2))
    U = np.linalg.qr(rng.standard_normal((5, 2)))[0]
    params = ModelParams(U[None], np.zeros((1, 5)), [1.0], [1.0])
    np.testing.assert_allclose(posterior_gram(0, 0, params), 2 * np.eye(2), atol=1e-15)
    F = rng.standard_normal((6, 2))
    params = ModelParams(F[None], np.zeros((1, 6)), [0.5], [1.0])
    np.testing.assert_allclose(posterior_gram(0, 0, params), 0.5 * np.eye(2) + F.T @ F, rtol=1e-15)


def test_posterior_mean_trivial_cases(rng):
    params = random_params(rng, 5, 2, 2, 2)
    np.testing.assert_allclose(posterior_mean(params.mu[1], 0, 1, params), 0.0, atol=1e-15)
    zero_F = ModelParams(np.zeros((2, 5, 2)), params.mu, params.v, params.pi)
    assert np.all(posterior_mean(rng.standard_normal(5), 1, 0, zero_F) == 0)


def test_prior_moments_recovered():
    params = ModelParams(np.zeros((1, 4, 3)), np.zeros((1, 4)), [1.0], [1.0])
    z = posterior_mean(np.zeros(4), 0, 0, params)
    np.testing.assert_array_equal(posterior_second_moment(z, 0, 0, params), np.eye(3))


def test_gaussian_conditioning_oracle(rng):
    for _ in range(30):
        d = int(rng.integers(2, 11))
        k = int(rng.integers(1, min(3, d - 1) + 1))
        params = random_params(rng, d, k, 2, 2)
        y = rng.standard_normal(d) * 2
        g, j = int(rng.integers(2)), int(rng.integers(2))
        mean_ref, cov_ref = _dense_conditional(y, g, j, params)
        z = posterior_mean(y, g, j, params)
        np.testing.assert_allclose(z, mean_ref, atol=1e-8)
        S = posterior_second_moment(z, g, j, params)
        np.testing.assert_allclose(S - np.outer(z, z), cov_ref, atol=1e-8)


def test_second_moment_trace_and_symmetry(rng):
    params = random_params(rng, 7, 3, 1, 2)
    y = rng.standard_normal(7)
    z = posterior_mean(y, 1, 0, params)
    S = posterior_second_moment(z, 1, 0, params)
    assert np.array_equal(S, S.T)
    Minv = np.linalg.inv(posterior_gram(1, 0, params))
    assert np.trace(S) == pytest.approx(params.v[1] * np.trace(Minv) + z @ z, rel=1e-12)
    assert np.all(np.linalg.eigvalsh(S - np.outer(z, z)) > 0)


def test_second_moment_monte_carlo():
    rng = np.random.default_rng(5)
    params = random_params(rng, 6, 2, 1, 1)
    y = rng.standard_normal(6)
    M = posterior_gram(0, 0, params)
    mean = np.linalg.solve(M, params.F[0].T @ (y - params.mu[0]))
    draws = rng.multivariate_normal(mean, params.v[0] * np.linalg.inv(M), size=1_000_000)
    outer = draws[:, :, None] * draws[:, None, :]
    mc = outer.mean(0)
    se = outer.std(0) / np.sqrt(len(draws))
    S = posterior_second_moment(posterior_mean(y, 0, 0, params), 0, 0, params)
    assert np.all(np.abs(S - mc) < 3 * se)


def test_batched_estep_matches_pointwise(rng):
    ds = random_dataset(rng, 20, 6, 3)
    params = random_params(rng, 6, 2, 2, 3)
    e = estep(ds, params)
    for i in (0, 7, 19):
        g = ds.groups[i]
        for j in range(2):
            z = posterior_mean(ds.samples[i], g, j, params)
            np.testing.assert_allclose(e.moments.z_mean[i, j], z, rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(
                e.moments.second_moment(i, j), posterior_second_moment(z, g, j, params), rtol=1e-10
            )
    assert e.log_likelihood == pytest.approx(observed_log_likelihood(ds, params), rel=1e-13)


def test_scale_equivariance(rng):
    ds = random_dataset(rng, 15, 5, 2)
    params = random_params(rng, 5, 2, 2, 2)
    base = estep(ds, params)
    for c in (0.1, 10.0):
        scaled_ds = Dataset(c * ds.samples, ds.groups)
        scaled = ModelParams(c * params.F, c * params.mu, c * c * params.v, params.pi)
        e = estep(scaled_ds, scaled)
        np.testing.assert_allclose(e.moments.z_mean, base.moments.z_mean, rtol=1e-10, atol=1e-13)
        np.testing.assert_allclose(e.moments.cov, base.moments.cov, rtol=1e-10)
        np.testing.assert_allclose(e.R, base.R, rtol=1e-9, atol=1e-14)


def test_em_decomposition_of_log_likelihood(rng):
    """At the exact posterior, LL = <log p(y, z, g)> + entropy of q(z, g)."""
    for _ in range(10):
        d, k, J, L = 6, 2, 3, 2
        ds = random_dataset(rng, 25, d, L)
        params = random_params(rng, d, k, J, L)
        e = estep(ds, params)
        q = expected_complete_loglik(ds, params, e.R, e.moments)
        q -= 0.5 * (d + k) * np.log(2 * np.pi) * ds.n
        entropy = -np.sum(xlogy(e.R, e.R))
        for i in range(ds.n):
            for j in range(J):
                cov = e.moments.cov[ds.groups[i], j]
                entropy += e.R[i, j] * 0.5 * np.linalg.slogdet(2 * np.pi * np.e * cov)[1]
        assert q + entropy == pytest.approx(e.log_likelihood, rel=1e-10)
