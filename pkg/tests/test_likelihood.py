import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from conftest import dense_cov, dense_log_pdf_matrix, dense_logpdf, random_dataset, random_params
from hemppcat.likelihood import (
    build_cache,
    log_pdf_component,
    log_pdf_matrix,
    mix,
    observed_log_likelihood,
    responsibilities,
)
from hemppcat.model import Dataset, ModelParams, MppcaParams


def test_standard_normal_at_mode():
    params = ModelParams(np.zeros((1, 2, 1)), np.zeros((1, 2)), [1.0], [1.0])
    # k < d rules out d=1, so use d=2: twice the 1-d value of -0.9189
    assert log_pdf_component(np.zeros(2), 0, 0, params) == pytest.approx(2 * -0.9189385332046727)


def test_logpdf_at_mean(rng):
    params = random_params(rng, 6, 2, 2, 2)
    cache = build_cache(params)
    val = log_pdf_component(params.mu[1], 1, 1, params, cache)
    assert val == pytest.approx(-3 * np.log(2 * np.pi) - 0.5 * cache.logdet_C[1, 1], rel=1e-14)


def test_logdet_matches_dense(rng):
    params = random_params(rng, 9, 3, 3, 2)
    cache = build_cache(params)
    for g in range(2):
        for j in range(3):
            _, ref = np.linalg.slogdet(dense_cov(params, g, j))
            assert cache.logdet_C[g, j] == pytest.approx(ref, rel=1e-10)


def test_component_matches_dense_d5(rng):
    params = random_params(rng, 5, 2, 2, 2)
    for _ in range(20):
        y = rng.standard_normal(5) * 3
        g, j = int(rng.integers(2)), int(rng.integers(2))
        assert abs(log_pdf_component(y, g, j, params) - dense_logpdf(y, g, j, params)) < 1e-9


def test_observed_ll_matches_dense(rng):
    ds = random_dataset(rng, 20, 8, 2)
    params = random_params(rng, 8, 3, 2, 2)
    logpdf = dense_log_pdf_matrix(ds, params)
    ref = np.sum(np.log(np.exp(logpdf) @ params.pi))
    assert observed_log_likelihood(ds, params) == pytest.approx(ref, rel=1e-9)
    np.testing.assert_allclose(log_pdf_matrix(ds, params), logpdf, rtol=1e-10)


def test_responsibilities_match_bayes_rule(rng):
    ds = random_dataset(rng, 15, 4, 2)
    params = random_params(rng, 4, 1, 2, 2)
    p = np.exp(dense_log_pdf_matrix(ds, params)) * params.pi
    np.testing.assert_allclose(responsibilities(ds, params), p / p.sum(1, keepdims=True), rtol=1e-10)


def test_single_sample_identity_model():
    d = 4
    params = ModelParams(np.zeros((1, d, 1)), np.zeros((1, d)), [1.0], [1.0])
    ds = Dataset(np.zeros((1, d)), [0])
    assert observed_log_likelihood(ds, params) == pytest.approx(-0.5 * d * np.log(2 * np.pi))


def test_duplicating_samples_doubles_ll(rng):
    ds = random_dataset(rng, 30, 6, 3)
    params = random_params(rng, 6, 2, 3, 3)
    doubled = Dataset(np.vstack([ds.samples, ds.samples]), np.concatenate([ds.groups, ds.groups]))
    assert observed_log_likelihood(doubled, params) == pytest.approx(
        2 * observed_log_likelihood(ds, params), rel=1e-14
    )


def test_single_component_rows_are_one(rng):
    ds = random_dataset(rng, 10, 3, 1)
    params = random_params(rng, 3, 1, 1, 1)
    assert np.array_equal(responsibilities(ds, params), np.ones((10, 1)))


def test_identical_components_split_evenly(rng):
    ds = random_dataset(rng, 10, 3, 2)
    p = random_params(rng, 3, 1, 1, 2)
    params = ModelParams(np.repeat(p.F, 2, 0), np.repeat(p.mu, 2, 0), p.v, [0.5, 0.5])
    np.testing.assert_allclose(responsibilities(ds, params), 0.5, atol=1e-15)


def test_zero_weight_component_gets_no_mass(rng):
    ds = random_dataset(rng, 10, 3, 1)
    p = random_params(rng, 3, 1, 2, 1)
    params = ModelParams(p.F, p.mu, p.v, [1.0, 0.0])
    R = responsibilities(ds, params)
    assert np.all(R[:, 1] == 0.0)
    with pytest.raises(ValueError):
        mix(np.zeros((2, 2)), [0.0, 0.0])


def test_far_samples_do_not_underflow(rng):
    d = 100
    params = random_params(rng, d, 3, 3, 2, v_range=(0.01, 0.02))
    ds = Dataset(rng.standard_normal((5, d)) * 50, [0, 1, 0, 1, 0])
    R = responsibilities(ds, params)
    assert np.all(np.isfinite(R))
    np.testing.assert_allclose(R.sum(1), 1.0, atol=1e-12)
    assert np.isfinite(observed_log_likelihood(ds, params))


def test_shift_invariance_of_mix(rng):
    logpdf = rng.standard_normal((6, 3)) * 10
    pi = rng.dirichlet(np.ones(3))
    _, R1 = mix(logpdf, pi)
    _, R2 = mix(logpdf + rng.standard_normal((6, 1)) * 1e3, pi)
    np.testing.assert_allclose(R1, R2, atol=1e-12)


def test_orthogonal_rotation_of_factors(rng):
    ds = random_dataset(rng, 25, 7, 2)
    params = random_params(rng, 7, 3, 2, 2)
    Q = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    rotated = ModelParams(params.F @ Q, params.mu, params.v, params.pi)
    assert observed_log_likelihood(ds, rotated) == pytest.approx(
        observed_log_likelihood(ds, params), rel=1e-12
    )


def test_mppca_params_use_mixture_variance(rng):
    ds = random_dataset(rng, 12, 5, 2)
    F = rng.standard_normal((2, 5, 2))
    mu = rng.standard_normal((2, 5))
    mp = MppcaParams(F, mu, [0.4, 1.7], [0.3, 0.7])
    ref = np.empty((12, 2))
    for i in range(12):
        for j in range(2):
            C = F[j] @ F[j].T + mp.v[j] * np.eye(5)
            ref[i, j] = multivariate_normal(mu[j], C).logpdf(ds.samples[i])
    np.testing.assert_allclose(log_pdf_matrix(ds, mp), ref, rtol=1e-10)


@settings(max_examples=40, deadline=None)
@given(
    d=st.integers(2, 20),
    data=st.data(),
    seed=st.integers(0, 2**32 - 1),
)
def test_woodbury_equals_dense_property(d, data, seed):
    k = data.draw(st.integers(1, d - 1))
    J = data.draw(st.integers(1, 3))
    L = data.draw(st.integers(1, 3))
    rng = np.random.default_rng(seed)
    params = random_params(rng, d, k, J, L, v_range=(0.05, 5.0))
    ds = random_dataset(rng, L + 5, d, L)
    np.testing.assert_allclose(
        log_pdf_matrix(ds, params), dense_log_pdf_matrix(ds, params), rtol=1e-8, atol=0
    )
