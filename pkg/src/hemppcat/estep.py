"""Posterior moments of the latent coefficients (the E-step).

Given component j and a sample y from noise group l, the coefficient z is
Gaussian with mean ``M^{-1} F^T (y - mu)`` and covariance ``v M^{-1}``, where
``M = v I_k + F^T F``.  Only the posterior means are stored per sample; the
covariances are shared by every sample of a (group, mixture) pair, so the
second moments are never materialised as an (n, J, k, k) tensor.
"""

import math
from dataclasses import dataclass

import numpy as np

from .likelihood import (
    cache_from_arrays,
    cholesky_solve,
    evaluate_components,
    group_index,
    mix,
    rows_by_group,
)


@dataclass(frozen=True, eq=False)
class PosteriorMoments:
    z_mean: np.ndarray  # (n, J, k)
    cov: np.ndarray  # (G, J, k, k), v * M^{-1}
    chol_M: np.ndarray  # (G, J, k, k)
    groups: np.ndarray  # (n,) row of the variance table for each sample

    def second_moment(self, i, j):
        z = self.z_mean[i, j]
        S = self.cov[self.groups[i], j] + np.outer(z, z)
        return 0.5 * (S + S.T)


@dataclass(frozen=True, eq=False)
class EStep:
    """Everything the M-step needs, evaluated at the current iterate."""

    log_likelihood: float
    R: np.ndarray  # (n, J)
    moments: PosteriorMoments
    rows: list


def _inverse_from_chol(chol):
    k = chol.shape[-1]
    out = np.empty_like(chol)
    for idx in np.ndindex(chol.shape[:-2]):
        out[idx] = cholesky_solve(chol[idx], np.eye(k))
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def run_estep(Y, groups, n_groups, F, mu, V, pi):
    """Array-level E-step shared by HeMPPCAT and MPPCA.

    ``V`` is the (G, J) variance table, ``groups`` the row of ``V`` for each
    sample.
    """
    cache = cache_from_arrays(F, V)
    rows = rows_by_group(groups, n_groups)
    logpdf, zbar = evaluate_components(Y, rows, F, mu, cache, with_moments=True)
    per_sample, R = mix(logpdf, pi)
    cov = V[:, :, None, None] * _inverse_from_chol(cache.chol_M)
    moments = PosteriorMoments(zbar, cov, cache.chol_M, groups)
    return EStep(math.fsum(per_sample), R, moments, rows)


def estep(dataset, params):
    groups, G = group_index(dataset, params)
    return run_estep(
        dataset.samples, groups, G, params.F, params.mu, params.variance_table(), params.pi
    )


def posterior_gram(group, j, params):
    """``M = v_l I_k + F_j^T F_j``."""
    F = params.F[j]
    return params.v[group] * np.eye(F.shape[1]) + F.T @ F


def posterior_mean(y, group, j, params):
    M = posterior_gram(group, j, params)
    chol = np.linalg.cholesky(M)
    return cholesky_solve(chol, params.F[j].T @ (np.asarray(y, dtype=float) - params.mu[j]))


def posterior_second_moment(z_mean, group, j, params):
    """``v_l M^{-1} + <z><z>^T``, symmetrised."""
    M = posterior_gram(group, j, params)
    chol = np.linalg.cholesky(M)
    k = M.shape[0]
    S = params.v[group] * cholesky_solve(chol, np.eye(k)) + np.outer(z_mean, z_mean)
    return 0.5 * (S + S.T)


def expected_complete_loglik(dataset, params, R, moments):
    """Expected complete-data log-likelihood ``<L_C>`` as a function of
    ``params``, with ``R`` and ``moments`` held at the iterate they were
    computed from.  Constant ``-(d + k)/2 log 2 pi`` terms are dropped.

    This is written straight from the per-sample definition (loops over
    groups and mixtures, no shared accumulators) so it can serve as an
    independent check on the M-step.
    """
    Y = dataset.samples
    d = Y.shape[1]
    groups = dataset.groups
    total = 0.0
    for j in range(len(params.pi)):
        F, mu = params.F[j], params.mu[j]
        FtF = F.T @ F
        with np.errstate(divide="ignore"):
            log_pi = np.log(params.pi[j])
        for g in range(len(params.v)):
            idx = np.flatnonzero(groups == g)
            r = R[idx, j]
            if not np.any(r > 0):
                continue
            v = params.v[g]
            z = moments.z_mean[idx, j]
            cov = moments.cov[moments.groups[idx[0]], j]
            resid = Y[idx] - mu
            tr_zz = np.trace(cov) + np.einsum("nk,nk->n", z, z)
            tr_FFzz = np.trace(FtF @ cov) + np.einsum("nk,kl,nl->n", z, FtF, z)
            cross = np.einsum("nk,nk->n", z, resid @ F)
            sq = np.einsum("nd,nd->n", resid, resid)
            term = (
                log_pi
                - 0.5 * d * np.log(v)
                - 0.5 * tr_zz
                - sq / (2 * v)
                + cross / v
                - tr_FFzz / (2 * v)
            )
            total += float(np.sum(r * term))
    return total
