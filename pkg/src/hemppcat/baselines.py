"""Comparison methods: K-Means++ seeding, K-Planes and classical MPPCA."""

import numpy as np

from ._engine import run_em
from ._rng import stream
from .model import VARIANCE_FLOOR, Dataset, KPlanesState, MppcaParams

MPPCA_MAX_ITERS = 500
MPPCA_REL_TOL = 1e-6
KPLANES_ITERS = 1000


def _samples(data):
    return data.samples if isinstance(data, Dataset) else np.asarray(data, dtype=float)


def _sqdist(X, c):
    diff = X - c
    return np.einsum("nd,nd->n", diff, diff)


def kmeanspp_seed(data, J, seed):
    """Indices of ``J`` distinct seed points chosen by D^2 sampling.

    The first index is uniform; each later one is drawn with probability
    proportional to the squared distance to the nearest chosen point.  Once
    every remaining point coincides with a chosen one, the rest are drawn
    uniformly from the unchosen indices.
    """
    X = _samples(data)
    n = len(X)
    if not 1 <= J <= n:
        raise ValueError(f"need 1 <= J <= n, got J={J}, n={n}")
    rng = stream(seed, "kmeans++")
    chosen = [int(rng.integers(n))]
    d2 = _sqdist(X, X[chosen[0]])
    for _ in range(1, J):
        weights = d2.copy()
        weights[chosen] = 0.0
        total = weights.sum()
        if total > 0:
            idx = int(rng.choice(n, p=weights / total))
        else:
            idx = int(rng.choice(np.setdiff1d(np.arange(n), chosen)))
        chosen.append(idx)
        d2 = np.minimum(d2, _sqdist(X, X[idx]))
    return np.array(chosen)


def nearest_center_assignment(X, centers_idx):
    """Assign every point to its closest seed; each seed keeps its own cluster."""
    C = X[centers_idx]
    dist = np.stack([_sqdist(X, c) for c in C], axis=1)
    assign = np.argmin(dist, axis=1)
    assign[centers_idx] = np.arange(len(centers_idx))
    return assign


def principal_directions(Xc, k):
    """Top-``k`` right singular vectors and values of a centred block.

    Blocks with fewer than ``k`` rows are completed with further orthonormal
    directions carrying zero singular value.
    """
    m, d = Xc.shape
    _, s, Vt = np.linalg.svd(Xc, full_matrices=m < k)
    scales = np.zeros(k)
    r = min(k, len(s))
    scales[:r] = s[:r]
    return Vt[:k].T.copy(), scales


def _refit(X, assign, J, k):
    d = X.shape[1]
    means = np.empty((J, d))
    bases = np.empty((J, d, k))
    scales = np.empty((J, k))
    counts = np.bincount(assign, minlength=J)
    for j in range(J):
        members = X[assign == j]
        means[j] = members.mean(axis=0)
        bases[j], scales[j] = principal_directions(members - means[j], k)
    return means, bases, scales, counts


def affine_residuals(X, means, bases):
    """Squared distance of every point to every affine subspace, (n, J)."""
    out = np.empty((len(X), len(means)))
    for j in range(len(means)):
        Xc = X - means[j]
        P = Xc @ bases[j]
        out[:, j] = np.maximum(np.einsum("nd,nd->n", Xc, Xc) - np.einsum("nk,nk->n", P, P), 0.0)
    return out


def _reassign(dist, J):
    assign = np.argmin(dist, axis=1)
    counts = np.bincount(assign, minlength=J)
    for j in np.flatnonzero(counts == 0):
        own = dist[np.arange(len(assign)), assign]
        movable = counts[assign] > 1
        idx = int(np.argmax(np.where(movable, own, -np.inf)))
        counts[assign[idx]] -= 1
        assign[idx] = j
        counts[j] = 1
    return assign


def kplanes(dataset, J, k, iters=KPLANES_ITERS, seed=0, init_assignment=None):
    """Cluster samples onto ``J`` affine subspaces of dimension ``k``.

    Alternates between refitting each cluster (mean plus top-``k`` principal
    directions) and moving each point to the subspace with the smallest
    orthogonal residual.  Ties go to the lowest index; a cluster left empty is
    reseeded with the point that currently has the largest residual.  Stops
    after ``iters`` refits or when the assignment no longer changes.

    Without ``init_assignment`` the clusters start from K-Means++ seeds and a
    nearest-seed assignment.
    """
    X = _samples(dataset)
    n = len(X)
    if not 1 <= J <= n:
        raise ValueError(f"need 1 <= J <= n, got J={J}, n={n}")
    if iters < 1:
        raise ValueError("iters must be at least 1")
    if init_assignment is None:
        assign = nearest_center_assignment(X, kmeanspp_seed(X, J, seed))
    else:
        assign = np.array(init_assignment, dtype=np.int64)
        if assign.shape != (n,) or assign.min() < 0 or assign.max() >= J:
            raise ValueError("init_assignment must hold n indices in [0, J)")
        if np.any(np.bincount(assign, minlength=J) == 0):
            raise ValueError("init_assignment leaves a cluster empty")
    trace = []
    for it in range(iters):
        means, bases, scales, counts = _refit(X, assign, J, k)
        dist = affine_residuals(X, means, bases)
        trace.append(float(dist[np.arange(n), assign].sum()))
        if it == iters - 1:
            break
        new = _reassign(dist, J)
        if np.array_equal(new, assign):
            break
        assign = new
    return KPlanesState(bases, means, scales, counts, assign, tuple(trace), iterations=len(trace))


def ppca_from_members(X, k, n_total):
    """Closed-form PPCA fit to one cluster: ``(F, mu, v, weight)``."""
    m, d = X.shape
    mu = X.mean(axis=0)
    Xc = X - mu
    U, s = principal_directions(Xc, k)
    eig = s**2 / m
    total = np.einsum("nd,nd->", Xc, Xc) / m
    v = max((total - eig.sum()) / (d - k), VARIANCE_FLOOR)
    amp = np.sqrt(np.maximum(eig - v, 1e-6 * max(eig.max(), v)))
    return U * amp, mu, v, m / n_total


def mppca_from_assignment(dataset, assignment, J, k):
    X = _samples(dataset)
    parts = [ppca_from_members(X[assignment == j], k, len(X)) for j in range(J)]
    F, mu, v, pi = (np.array(p) for p in zip(*parts))
    return MppcaParams(F, mu, v, pi / pi.sum())


def mppca_fit(dataset, J, k, max_iters=MPPCA_MAX_ITERS, rel_tol=MPPCA_REL_TOL, init=None, seed=0):
    """Classical MPPCA by EM: the HeMPPCAT sweep with the noise variance tied
    to the mixture instead of the noise group.

    Unless ``init`` is given, the start is a per-cluster PPCA fit to a
    K-Planes clustering (1000 iterations, seeded with ``seed``).
    """
    if init is None:
        state = kplanes(dataset, J, k, seed=seed)
        init = mppca_from_assignment(dataset, state.assignment, J, k)
    (F, mu, v, pi), report = run_em(
        dataset, "mixture", init.F, init.mu, init.v, init.pi, max_iters, rel_tol
    )
    return MppcaParams(F, mu, v, pi), report
