"""Fitting HeMPPCAT: initialisation, the GEM loop and convergence control."""

from dataclasses import dataclass

import numpy as np

from ._engine import run_em
from .baselines import (
    kmeanspp_seed,
    kplanes,
    mppca_fit,
    mppca_from_assignment,
    nearest_center_assignment,
    principal_directions,
)
from .likelihood import responsibilities
from .model import (
    VARIANCE_FLOOR,
    DegenerateFitError,
    ModelParams,
    MppcaParams,
    validate_params,
)

INIT_CHOICES = ("mppca", "kmeanspp")


@dataclass(frozen=True)
class FitOptions:
    """``init`` is ``"mppca"``, ``"kmeanspp"`` or an explicit ``ModelParams``."""

    max_iters: int = 500
    rel_tol: float = 1e-7
    init: object = "mppca"
    seed: int = 0
    kplanes_iters: int = 1000
    mppca_max_iters: int = 500
    mppca_rel_tol: float = 1e-6

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be a positive integer")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if not (isinstance(self.init, ModelParams) or self.init in INIT_CHOICES):
            raise ValueError(f"init must be one of {INIT_CHOICES} or ModelParams")


def _check_dataset(dataset, hyper):
    if dataset.d != hyper.d:
        raise ValueError(f"dataset has dimension {dataset.d}, expected {hyper.d}")
    if dataset.n_groups != hyper.L:
        raise ValueError(f"dataset has {dataset.n_groups} noise groups, expected {hyper.L}")
    if dataset.n < hyper.J:
        raise ValueError("need at least J samples")


def group_variances_from_mppca(dataset, mppca):
    """Map per-mixture variances to per-group ones: each ``v_l`` is the
    average over group l's samples of the responsibility-weighted ``v_j``."""
    R = responsibilities(dataset, mppca)
    per_sample = R @ mppca.v
    sums = np.bincount(dataset.groups, weights=per_sample, minlength=dataset.n_groups)
    return np.maximum(sums / dataset.group_counts(), VARIANCE_FLOOR)


def init_from_mppca(dataset, hyper, seed=0, mppca=None, options=None):
    """HeMPPCAT start from a converged MPPCA fit (itself started from K-Planes).

    Pass ``mppca`` to reuse an existing fit.
    """
    options = options or FitOptions(seed=seed)
    if mppca is None:
        state = kplanes(dataset, hyper.J, hyper.k, iters=options.kplanes_iters, seed=seed)
        start = mppca_from_assignment(dataset, state.assignment, hyper.J, hyper.k)
        mppca, report = mppca_fit(
            dataset,
            hyper.J,
            hyper.k,
            max_iters=options.mppca_max_iters,
            rel_tol=options.mppca_rel_tol,
            init=start,
        )
        if report.stop_reason == "degenerate":
            raise DegenerateFitError(f"MPPCA initialisation failed: {report.message}")
    if not isinstance(mppca, MppcaParams):
        raise TypeError("mppca must be MppcaParams")
    v = group_variances_from_mppca(dataset, mppca)
    return ModelParams(mppca.F, mppca.mu, v, mppca.pi)


def init_from_kmeanspp(dataset, hyper, seed=0):
    """Start from a K-Means++ clustering.

    Means are cluster means, factors the top principal directions of each
    cluster scaled by ``s / sqrt(m - 1)``, mixing weights the cluster sizes,
    and each group variance the pooled residual variance of that group's
    samples around their cluster's affine subspace.  Clusters with fewer
    than ``k + 1`` members borrow the global principal directions.
    """
    _check_dataset(dataset, hyper)
    X = dataset.samples
    J, k, d = hyper.J, hyper.k, hyper.d
    assign = nearest_center_assignment(X, kmeanspp_seed(X, J, seed))
    global_U, global_s = principal_directions(X - X.mean(axis=0), k)
    global_scale = global_s / np.sqrt(max(len(X) - 1, 1))
    F = np.empty((J, d, k))
    mu = np.empty((J, d))
    resid = np.empty(len(X))
    for j in range(J):
        idx = np.flatnonzero(assign == j)
        members = X[idx]
        mu[j] = members.mean(axis=0)
        if len(idx) >= k + 1:
            U, s = principal_directions(members - mu[j], k)
            F[j] = U * (s / np.sqrt(len(idx) - 1))
        else:
            U = global_U
            F[j] = U * global_scale
        Xc = members - mu[j]
        P = Xc @ U
        resid[idx] = np.einsum("nd,nd->n", Xc, Xc) - np.einsum("nk,nk->n", P, P)
    sums = np.bincount(dataset.groups, weights=np.maximum(resid, 0.0), minlength=hyper.L)
    v = np.maximum(sums / (dataset.group_counts() * (d - k)), VARIANCE_FLOOR)
    counts = np.bincount(assign, minlength=J).astype(float)
    return ModelParams(F, mu, v, counts / counts.sum())


def initial_params(dataset, hyper, options):
    if isinstance(options.init, ModelParams):
        return options.init
    if options.init == "kmeanspp":
        return init_from_kmeanspp(dataset, hyper, options.seed)
    return init_from_mppca(dataset, hyper, options.seed, options=options)


def fit(dataset, hyper, options=None):
    """Fit HeMPPCAT by generalised EM.

    Returns ``(params, report)``.  ``report.ll_trace`` starts with the
    log-likelihood of the initial parameters.  The fit converges when the
    change in log-likelihood is at most ``rel_tol * (1 + |LL|)``.  A sweep
    that hits an empty component or singular moments ends the fit with
    ``stop_reason="degenerate"`` and the last good parameters.
    """
    options = options or FitOptions()
    _check_dataset(dataset, hyper)
    start = initial_params(dataset, hyper, options)
    validate_params(start, hyper)
    (F, mu, v, pi), report = run_em(
        dataset, "group", start.F, start.mu, start.v, start.pi, options.max_iters, options.rel_tol
    )
    return ModelParams(F, mu, v, pi), report
