"""The generalised EM loop shared by HeMPPCAT and the MPPCA baseline."""

import logging
import warnings

import numpy as np

from .estep import run_estep
from .model import DegenerateFitError, FitReport, Timer
from .mstep import (
    factors_update,
    means_update,
    residual_stats,
    update_pi,
    variances_per_group,
    variances_per_mixture,
)

log = logging.getLogger(__name__)

MONOTONE_RTOL = 1e-8


class GemMonotonicityWarning(RuntimeWarning):
    pass


def variance_layout(dataset, tie, J):
    """Sample-to-row map and table builder for a variance tying scheme.

    ``tie="group"`` gives one variance per noise group (HeMPPCAT),
    ``tie="mixture"`` one per component (MPPCA).
    """
    if tie == "group":
        return dataset.groups, dataset.n_groups, lambda v: np.repeat(v[:, None], J, axis=1)
    if tie == "mixture":
        return np.zeros(dataset.n, dtype=np.int64), 1, lambda v: np.asarray(v)[None, :]
    raise ValueError(f"unknown variance tying {tie!r}")


def sweep(Y, groups, rows, e, F, mu, tie, table):
    """M-step given an E-step result ``e`` computed at ``(F, mu, ...)``."""
    d = Y.shape[1]
    pi = update_pi(e.R)
    mass, res = residual_stats(Y, rows, e.R, e.moments, F, mu)
    v = variances_per_group(mass, res, d) if tie == "group" else variances_per_mixture(mass, res, d)
    mu_new, W = means_update(Y, groups, e.R, e.moments, table(v), F)
    F_new = factors_update(Y, rows, W, e.moments, mu_new)
    return F_new, mu_new, v, pi


def run_em(dataset, tie, F, mu, v, pi, max_iters, rel_tol):
    """Iterate E/M sweeps until the relative log-likelihood change is small.

    Returns ``((F, mu, v, pi), FitReport)``.  On a degenerate sweep the last
    good iterate is returned with ``stop_reason="degenerate"``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    if not rel_tol > 0:
        raise ValueError("rel_tol must be positive")
    Y = dataset.samples
    J = len(pi)
    groups, G, table = variance_layout(dataset, tie, J)
    state = tuple(np.array(a, dtype=float) for a in (F, mu, v, pi))
    trace = []
    sweeps = 0
    stop, converged, message = "max_iters", False, ""
    with Timer() as timer:
        while True:
            F, mu, v, pi = state
            try:
                e = run_estep(Y, groups, G, F, mu, table(v), pi)
            except (np.linalg.LinAlgError, ValueError) as err:
                stop, message = "degenerate", f"E-step failed: {err}"
                break
            ll = e.log_likelihood
            if not np.isfinite(ll):
                stop, message = "degenerate", "non-finite log-likelihood"
                break
            if trace:
                delta = ll - trace[-1]
                if delta < -MONOTONE_RTOL * (1 + abs(ll)):
                    warnings.warn(
                        f"log-likelihood decreased by {-delta:.3g} at sweep {sweeps}",
                        GemMonotonicityWarning,
                        stacklevel=2,
                    )
            trace.append(ll)
            if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= rel_tol * (1 + abs(ll)):
                stop, converged = "tolerance", True
                break
            if sweeps >= max_iters:
                break
            try:
                new = sweep(Y, groups, e.rows, e, F, mu, tie, table)
            except DegenerateFitError as err:
                stop, message = "degenerate", str(err)
                break
            if not all(np.all(np.isfinite(a)) for a in new):
                stop, message = "degenerate", "non-finite parameters after sweep"
                break
            prev, state = state, new
            sweeps += 1
    if stop == "degenerate" and len(trace) < sweeps + 1:
        if sweeps == 0:
            raise DegenerateFitError(f"starting point is unusable: {message}")
        # the iterate that failed its E-step is discarded
        state = prev
        sweeps -= 1
    log.debug("EM (%s) stopped after %d sweeps: %s", tie, sweeps, stop)
    report = FitReport(tuple(trace), sweeps, converged, stop, message, elapsed=timer.elapsed)
    return state, report
