"""Metrics and experiment harnesses.

* factor-error sweep over the group-1 noise variance, comparing K-Planes,
  MPPCA and HeMPPCAT on synthetic data;
* maximum-likelihood classification of held-out samples and the
  misclassification rate per noise group.
"""

import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ._rng import derive_seed
from .baselines import affine_residuals, kplanes, mppca_fit, mppca_from_assignment
from .driver import FitOptions, fit, init_from_mppca
from .likelihood import log_pdf_component, log_pdf_matrix
from .model import DegenerateFitError, Hyper, KPlanesState
from .synth import generate, train_test_split, with_variances

log = logging.getLogger(__name__)

METHODS = ("kplanes", "mppca", "hemppcat")


def factor_error(F_hat, F_true):
    """``|F_hat F_hat^T - F F^T|_F / |F F^T|_F``."""
    F_hat = np.asarray(F_hat, dtype=float)
    F_true = np.asarray(F_true, dtype=float)
    if F_hat.shape != F_true.shape:
        raise ValueError(f"shape mismatch {F_hat.shape} vs {F_true.shape}")
    G_true = F_true @ F_true.T
    denom = np.linalg.norm(G_true)
    if denom == 0:
        raise ValueError("factor error is undefined for a zero reference")
    return float(np.linalg.norm(F_hat @ F_hat.T - G_true) / denom)


def aligned_factor_errors(F_hats, F_trues):
    """Per-true-component errors under the component permutation that
    minimises their total.  Returns ``(errors, perm)`` with ``F_hats[perm[j]]``
    matched to ``F_trues[j]``."""
    J = len(F_trues)
    table = np.array([[factor_error(F_hats[a], F_trues[j]) for a in range(J)] for j in range(J)])
    best = min(itertools.permutations(range(J)), key=lambda p: table[np.arange(J), p].sum())
    return table[np.arange(J), best], best


def classify(y, group, params):
    """Most probable component ``argmax_j log pi_j + log p(y | j)``; ties go
    to the lowest index.  ``group`` is ignored by models without groups."""
    if isinstance(params, KPlanesState):
        d = affine_residuals(np.asarray(y, dtype=float)[None, :], params.means, params.bases)
        return int(np.argmin(d[0]))
    with np.errstate(divide="ignore"):
        scores = [
            np.log(params.pi[j]) + log_pdf_component(y, group, j, params)
            for j in range(len(params.pi))
        ]
    return int(np.argmax(scores))


def predict(dataset, params):
    """Vectorised :func:`classify` over a dataset.

    K-Planes states classify by nearest affine subspace; probabilistic models
    by maximum posterior.
    """
    if isinstance(params, KPlanesState):
        return np.argmin(affine_residuals(dataset.samples, params.means, params.bases), axis=1)
    with np.errstate(divide="ignore"):
        scores = log_pdf_matrix(dataset, params) + np.log(params.pi)
    return np.argmax(scores, axis=1)


def misclassification_rate(predictions, labels, align=True, n_classes=None):
    """Fraction of wrong predictions.

    With ``align`` the predicted indices are relabelled by the permutation
    that minimises the error (fitted components carry no inherent order).
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    if len(labels) == 0:
        raise ValueError("nothing to score")
    J = n_classes or int(max(predictions.max(), labels.max())) + 1
    if predictions.min() < 0 or labels.min() < 0 or max(predictions.max(), labels.max()) >= J:
        raise ValueError("label out of range")
    if not align:
        return float(np.count_nonzero(predictions != labels) / len(labels))
    if J > 8:
        raise ValueError("permutation alignment supports at most 8 classes")
    confusion = np.zeros((J, J), dtype=np.int64)
    np.add.at(confusion, (predictions, labels), 1)
    best = max(confusion[list(p), np.arange(J)].sum() for p in itertools.permutations(range(J)))
    return float((len(labels) - best) / len(labels))


def best_label_permutation(predictions, labels, J):
    confusion = np.zeros((J, J), dtype=np.int64)
    np.add.at(confusion, (predictions, labels), 1)
    return max(itertools.permutations(range(J)), key=lambda p: confusion[list(p), np.arange(J)].sum())


def group_error_rates(predictions, dataset, J):
    """Error rate per noise group plus overall, all under the single label
    permutation that is best overall."""
    perm = best_label_permutation(predictions, dataset.labels, J)
    mapped = np.argsort(perm)[predictions]
    wrong = mapped != dataset.labels
    rates = {}
    for g in range(dataset.n_groups):
        mask = dataset.groups == g
        rates[g] = float(wrong[mask].mean()) if mask.any() else math.nan
    rates["overall"] = float(wrong.mean())
    return rates


# -- fitting all three methods from one seed -------------------------------


@dataclass(frozen=True)
class MethodFits:
    kplanes: object
    mppca: object
    hemppcat: object
    failures: tuple


def fit_methods(dataset, hyper, seed, methods=METHODS, options=None):
    """Fit the requested methods along one shared initialisation chain:
    K-Planes (seeded) -> MPPCA started from it -> HeMPPCAT started from the
    MPPCA estimate.  A method whose fit ends degenerate is reported in
    ``failures`` and its slot is ``None``.
    """
    options = options or FitOptions(seed=seed)
    J, k = hyper.J, hyper.k
    failures = []
    state = kplanes(dataset, J, k, iters=options.kplanes_iters, seed=seed)
    mp = he = None
    if "mppca" in methods or "hemppcat" in methods:
        start = mppca_from_assignment(dataset, state.assignment, J, k)
        try:
            mp, report = mppca_fit(
                dataset, J, k, max_iters=options.mppca_max_iters,
                rel_tol=options.mppca_rel_tol, init=start,
            )
        except DegenerateFitError:
            mp, report = None, None
        if report is None or report.stop_reason == "degenerate":
            failures.append("mppca")
            mp = None
    if "hemppcat" in methods:
        if mp is None:
            failures.append("hemppcat")
        else:
            start = init_from_mppca(dataset, hyper, seed, mppca=mp)
            he_opts = FitOptions(
                max_iters=options.max_iters, rel_tol=options.rel_tol, init=start, seed=seed
            )
            he, report = fit(dataset, hyper, he_opts)
            if report.stop_reason == "degenerate":
                failures.append("hemppcat")
                he = None
    return MethodFits(
        state if "kplanes" in methods else None,
        mp if "mppca" in methods else None,
        he,
        tuple(failures),
    )


def method_factors(fits, name):
    obj = getattr(fits, name)
    if obj is None:
        return None
    return obj.factors() if name == "kplanes" else obj.F


# -- factor-error sweep ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class SweepResult:
    """``errors[g, m, j]`` is the mean error of method m on true component j
    at grid point g; ``n_ok[g, m]`` counts the replicates that entered it."""

    v1_grid: np.ndarray
    methods: tuple
    errors: np.ndarray
    n_ok: np.ndarray
    replicates: int

    def __post_init__(self):
        grid = np.asarray(self.v1_grid, dtype=float)
        if np.any(np.diff(grid) <= 0):
            raise ValueError("v1 grid must be strictly increasing")
        errs = np.asarray(self.errors, dtype=float)
        if np.any(errs[np.isfinite(errs)] < 0):
            raise ValueError("errors must be non-negative")
        object.__setattr__(self, "v1_grid", grid)
        object.__setattr__(self, "errors", errs)
        object.__setattr__(self, "n_ok", np.asarray(self.n_ok, dtype=np.int64))
        object.__setattr__(self, "methods", tuple(self.methods))

    def mean_error(self, v1, method):
        g = int(np.flatnonzero(np.isclose(self.v1_grid, v1))[0])
        return self.errors[g, self.methods.index(method)]

    def rows(self):
        for g, v1 in enumerate(self.v1_grid):
            for m, name in enumerate(self.methods):
                for j in range(self.errors.shape[2]):
                    yield v1, name, j + 1, self.errors[g, m, j], self.n_ok[g, m]

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["v1", "method", "component", "mean_error", "n_ok"])
            for v1, name, j, err, ok in self.rows():
                writer.writerow([repr(float(v1)), name, j, repr(float(err)), int(ok)])

    @classmethod
    def from_csv(cls, path, replicates=0):
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        grid = sorted({float(r["v1"]) for r in rows})
        methods = tuple(dict.fromkeys(r["method"] for r in rows))
        J = max(int(r["component"]) for r in rows)
        errors = np.full((len(grid), len(methods), J), np.nan)
        n_ok = np.zeros((len(grid), len(methods)), dtype=np.int64)
        for r in rows:
            g, m = grid.index(float(r["v1"])), methods.index(r["method"])
            errors[g, m, int(r["component"]) - 1] = float(r["mean_error"])
            n_ok[g, m] = int(r["n_ok"])
        return cls(np.array(grid), methods, errors, n_ok, replicates)


def _sweep_cell(args):
    base_config, v1, rep, methods, seed, options = args
    rep_seed = derive_seed(seed, "replicate", rep)
    config = with_variances(base_config, (v1,) + tuple(base_config.variances[1:]))
    config = replace(config, seed=rep_seed)
    dataset, truth = generate(config)
    hyper = Hyper(d=config.d, k=config.k, J=config.J, L=config.L)
    fits = fit_methods(dataset, hyper, derive_seed(rep_seed, "fit"), methods, options)
    out = {}
    for name in methods:
        F_hats = method_factors(fits, name)
        out[name] = None if F_hats is None else aligned_factor_errors(F_hats, truth.F)[0]
    return out


def run_v1_sweep(base_config, v1_grid, replicates, methods=METHODS, seed=0, options=None,
                 threads=1, progress=None):
    """Mean per-component factor error of each method across replicates,
    for every group-1 variance in ``v1_grid``.

    Replicate r uses the same ground-truth model, coefficients and
    standardised noise at every grid point (only the noise scale changes).
    Degenerate fits are left out of the mean and counted in ``n_ok``.
    """
    methods = tuple(m for m in METHODS if m in methods)
    if not methods:
        raise ValueError(f"methods must be drawn from {METHODS}")
    grid = [float(v) for v in v1_grid]
    cells = [(base_config, v1, r, methods, seed, options) for v1 in grid for r in range(replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = []
        for i, cell in enumerate(cells):
            results.append(_sweep_cell(cell))
            if progress is not None and (i + 1) % replicates == 0:
                progress(cell[1], len(results) // replicates, len(grid))
    J = base_config.J
    errors = np.full((len(grid), len(methods), J), np.nan)
    n_ok = np.zeros((len(grid), len(methods)), dtype=np.int64)
    for g in range(len(grid)):
        block = results[g * replicates : (g + 1) * replicates]
        for m, name in enumerate(methods):
            ok = [res[name] for res in block if res[name] is not None]
            n_ok[g, m] = len(ok)
            if ok:
                errors[g, m] = np.mean(ok, axis=0)
    return SweepResult(np.array(grid), methods, errors, n_ok, replicates)


# -- classification experiment ---------------------------------------------


def classification_report(test, models):
    """Rows ``(group, method, error_rate)`` for every noise group and
    ``overall``; ``models`` maps method name to fitted parameters."""
    rows = []
    for name, params in models.items():
        J = params.hyper.J
        rates = group_error_rates(predict(test, params), test, J)
        for g in range(test.n_groups):
            rows.append((str(g + 1), name, rates[g]))
        rows.append(("overall", name, rates["overall"]))
    return rows


def write_classification_report(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["group", "method", "error_rate"])
        for group, method, rate in rows:
            writer.writerow([group, method, repr(float(rate))])


def trajectory_experiment(dataset, k, seed, train_fraction=0.8, options=None):
    """Fit all methods on a stratified train split and score the test split.

    Returns ``(rows, fits)`` where ``rows`` is the classification report.
    """
    train, test = train_test_split(dataset, train_fraction, seed)
    J = int(dataset.labels.max()) + 1
    hyper = Hyper(d=dataset.d, k=k, J=J, L=train.n_groups)
    fits = fit_methods(train, hyper, seed, METHODS, options)
    models = {name: getattr(fits, name) for name in METHODS if getattr(fits, name) is not None}
    return classification_report(test, models), fits

