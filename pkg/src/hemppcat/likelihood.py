"""Observed-data likelihood of the heteroscedastic MPPCA model.

Each component density is Gaussian with covariance ``C = F F^T + v I_d``.
Nothing d x d is ever formed: with ``M = v I_k + F^T F`` and its Cholesky
factor ``L_M``,

    log det C = (d - k) log v + log det M
    (y - mu)^T C^{-1} (y - mu) = (|y - mu|^2 - |L_M^{-1} F^T (y - mu)|^2) / v
                               = |y - mu - F <z>|^2 / v + |<z>|^2

with ``<z> = M^{-1} F^T (y - mu)``.  The last form is used: it is a sum of
non-negative terms, whereas the difference form loses all precision once v
sits near the variance floor.  A full pass costs O(n J d k) plus O(L J k^3).

The functions accept either :class:`~hemppcat.model.ModelParams` (variance
per noise group) or :class:`~hemppcat.model.MppcaParams` (variance per
mixture, noise groups ignored).  Internally both become an (G, J) variance
table indexed by (group, mixture).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import logsumexp

from .model import MppcaParams

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class ComponentGaussianCache:
    """Per (group, mixture) Cholesky factors of ``M`` and ``log det C``."""

    chol_M: np.ndarray  # (G, J, k, k), lower triangular
    logdet_C: np.ndarray  # (G, J)
    variances: np.ndarray  # (G, J)
    d: int


def gram_matrices(F, V):
    """``M[g, j] = V[g, j] I_k + F_j^T F_j`` for a (G, J) variance table."""
    FtF = np.einsum("jdk,jdl->jkl", F, F)
    k = F.shape[2]
    return FtF[None, :, :, :] + V[:, :, None, None] * np.eye(k)


def cache_from_arrays(F, V):
    J, d, k = F.shape
    M = gram_matrices(F, V)
    chol = np.linalg.cholesky(M)
    logdet_M = 2.0 * np.log(np.diagonal(chol, axis1=2, axis2=3)).sum(axis=2)
    logdet_C = (d - k) * np.log(V) + logdet_M
    return ComponentGaussianCache(chol, logdet_C, np.array(V, dtype=float), d)


def build_cache(params):
    return cache_from_arrays(params.F, params.variance_table())


def group_index(dataset, params):
    """Row of the variance table used by each sample."""
    if isinstance(params, MppcaParams):
        return np.zeros(dataset.n, dtype=np.int64), 1
    return dataset.groups, len(params.v)


def rows_by_group(groups, n_groups):
    return [np.flatnonzero(groups == g) for g in range(n_groups)]


def evaluate_components(Y, rows, F, mu, cache, with_moments=False):
    """Log-densities ``(n, J)`` and, optionally, posterior means ``(n, J, k)``.

    ``rows[g]`` lists the samples whose variance comes from row ``g`` of the
    variance table.
    """
    n, d = Y.shape
    J, _, k = F.shape
    logpdf = np.empty((n, J))
    zbar = np.empty((n, J, k)) if with_moments else None
    for j in range(J):
        Yc = Y - mu[j]
        P = Yc @ F[j]
        for g, idx in enumerate(rows):
            if idx.size == 0:
                continue
            Lm = cache.chol_M[g, j]
            z = cho_solve((Lm, True), P[idx].T).T
            e2 = _mahalanobis(Yc[idx], F[j], z, cache.variances[g, j])
            logpdf[idx, j] = -0.5 * (d * LOG_2PI + cache.logdet_C[g, j] + e2)
            if with_moments:
                zbar[idx, j] = z
    return logpdf, zbar


def _mahalanobis(Yc, F, z, v):
    fit = Yc - z @ F.T
    return np.einsum("nd,nd->n", fit, fit) / v + np.einsum("nk,nk->n", z, z)


def log_pdf_component(y, group, j, params, cache=None):
    """``log p(y | j)`` for a sample from noise group ``group``."""
    cache = build_cache(params) if cache is None else cache
    g = 0 if isinstance(params, MppcaParams) else group
    y = np.asarray(y, dtype=float)
    r = y - params.mu[j]
    z = cho_solve((cache.chol_M[g, j], True), params.F[j].T @ r)
    e2 = _mahalanobis(r[None, :], params.F[j], z[None, :], cache.variances[g, j])[0]
    return -0.5 * (len(y) * LOG_2PI + cache.logdet_C[g, j] + e2)


def log_pdf_matrix(dataset, params, cache=None):
    """All component log-densities, shape (n, J)."""
    cache = build_cache(params) if cache is None else cache
    groups, G = group_index(dataset, params)
    logpdf, _ = evaluate_components(
        dataset.samples, rows_by_group(groups, G), params.F, params.mu, cache
    )
    return logpdf


def mix(logpdf, pi):
    """Combine component log-densities with mixing weights.

    Returns ``(per_sample_log_likelihood, R)``; components with ``pi_j = 0``
    get zero responsibility.
    """
    pi = np.asarray(pi, dtype=float)
    if not np.any(pi > 0):
        raise ValueError("all mixing proportions are zero")
    with np.errstate(divide="ignore"):
        logw = logpdf + np.log(pi)
    per_sample = logsumexp(logw, axis=1)
    R = np.exp(logw - per_sample[:, None])
    R /= R.sum(axis=1, keepdims=True)
    return per_sample, R


def responsibilities(dataset, params):
    return mix(log_pdf_matrix(dataset, params), params.pi)[1]


def observed_log_likelihood(dataset, params):
    return math.fsum(mix(log_pdf_matrix(dataset, params), params.pi)[0])


def cholesky_solve(chol, b):
    return cho_solve((chol, True), b)
