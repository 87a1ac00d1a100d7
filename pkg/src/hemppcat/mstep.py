"""Closed-form conditional maximisers, applied in the order pi, v, mu, F.

All four updates reuse the posterior moments computed at the current
iterate.  The variance update sees the old means and factors, the mean
update the new variances and old factors, and the factor update the new
variances and new means.

The array-level helpers work on an (G, J) variance table so that the same
code serves HeMPPCAT (one variance per noise group) and classical MPPCA (one
variance per mixture, a single pseudo-group).
"""

import numpy as np

from .estep import estep
from .model import (
    VARIANCE_FLOOR,
    EmptyComponentError,
    ModelParams,
    RankDeficientMomentsError,
)

EMPTY_MASS = 1e-10
PIVOT_RTOL = 1e-12


def update_pi(R):
    """Column means of the responsibilities, renormalised onto the simplex."""
    S = np.asarray(R, dtype=float).sum(axis=0)
    return S / S.sum()


def residual_stats(Y, rows, R, moments, F, mu):
    """Per (group, mixture) responsibility mass and expected squared residual.

    ``res[g, j] = sum_{i in g} R_ij E|y_i - mu_j - F_j z|^2`` where the
    expectation is over the stored posterior of z.  Expanding the square gives
    ``|y - mu - F<z>|^2 + tr(F^T F cov)``, which is non-negative term by term.
    """
    G, J = len(rows), F.shape[0]
    mass = np.zeros((G, J))
    res = np.zeros((G, J))
    for j in range(J):
        FtF = F[j].T @ F[j]
        fit = Y - mu[j] - moments.z_mean[:, j] @ F[j].T
        sq = np.einsum("nd,nd->n", fit, fit)
        for g, idx in enumerate(rows):
            r = R[idx, j]
            mass[g, j] = r.sum()
            res[g, j] = r @ sq[idx] + mass[g, j] * np.sum(FtF * moments.cov[g, j])
    return mass, res


def variances_per_group(mass, res, d):
    total = mass.sum(axis=1)
    if np.any(total <= 0):
        raise EmptyComponentError("a noise group carries no responsibility mass")
    return np.maximum(res.sum(axis=1) / (d * total), VARIANCE_FLOOR)


def variances_per_mixture(mass, res, d):
    total = mass.sum(axis=0)
    if np.any(total < EMPTY_MASS):
        raise EmptyComponentError(f"empty component(s) {np.flatnonzero(total < EMPTY_MASS).tolist()}")
    return np.maximum(res.sum(axis=0) / (d * total), VARIANCE_FLOOR)


def _check_mass(R):
    mass = R.sum(axis=0)
    empty = np.flatnonzero(mass < EMPTY_MASS)
    if empty.size:
        raise EmptyComponentError(f"empty component(s) {empty.tolist()}")


def means_update(Y, groups, R, moments, V_new, F):
    _check_mass(R)
    W = R / V_new[groups]
    J = F.shape[0]
    mu = np.empty((J, Y.shape[1]))
    for j in range(J):
        w = W[:, j]
        mu[j] = (w @ Y - F[j] @ (w @ moments.z_mean[:, j])) / w.sum()
    return mu, W


def factors_update(Y, rows, W, moments, mu):
    J, d = mu.shape
    k = moments.z_mean.shape[2]
    F = np.empty((J, d, k))
    for j in range(J):
        z = moments.z_mean[:, j]
        wz = W[:, j, None] * z
        Bt = (Y - mu[j]).T @ wz
        K = z.T @ wz
        for g, idx in enumerate(rows):
            K += W[idx, j].sum() * moments.cov[g, j]
        K = 0.5 * (K + K.T)
        F[j] = _solve_right(K, Bt, j)
    return F


def _solve_right(K, Bt, j):
    """``Bt K^{-1}`` via Cholesky of ``K``, refusing near-singular ``K``."""
    k = K.shape[0]
    scale = np.trace(K) / k
    try:
        chol = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        raise RankDeficientMomentsError(f"moment matrix of component {j} is not positive definite") from None
    if not scale > 0 or np.min(np.diag(chol)) ** 2 < PIVOT_RTOL * scale:
        raise RankDeficientMomentsError(f"moment matrix of component {j} is numerically singular")
    X = np.linalg.solve(chol, Bt.T)
    return np.linalg.solve(chol.T, X).T


# -- public per-update API on ModelParams ---------------------------------


def update_v(dataset, R, params_t, moments):
    """Per-group noise variances from the current means and factors."""
    rows = [np.flatnonzero(dataset.groups == g) for g in range(len(params_t.v))]
    mass, res = residual_stats(dataset.samples, rows, R, moments, params_t.F, params_t.mu)
    return variances_per_group(mass, res, dataset.d)


def update_mu(dataset, R, moments, v_new, F_t):
    V = np.repeat(np.asarray(v_new, dtype=float)[:, None], R.shape[1], axis=1)
    return means_update(dataset.samples, dataset.groups, R, moments, V, F_t)[0]


def update_F(dataset, R, moments, v_new, mu_new):
    v_new = np.asarray(v_new, dtype=float)
    rows = [np.flatnonzero(dataset.groups == g) for g in range(len(v_new))]
    W = R / v_new[dataset.groups][:, None]
    return factors_update(dataset.samples, rows, W, moments, np.asarray(mu_new, dtype=float))


def gem_sweep(dataset, params):
    """One E-step plus the four sequential conditional maximisations."""
    e = estep(dataset, params)
    pi = update_pi(e.R)
    v = update_v(dataset, e.R, params, e.moments)
    mu = update_mu(dataset, e.R, e.moments, v, params.F)
    F = update_F(dataset, e.R, e.moments, v, mu)
    return ModelParams(F, mu, v, pi)
