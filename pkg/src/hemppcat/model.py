"""Domain types shared by every part of the package, plus their file formats.

Indices are 0-based in memory (groups ``0..L-1``, mixtures ``0..J-1``) and
1-based on disk, matching the usual way such datasets are written down.

Model file format (``schema_version 1``)
----------------------------------------
Plain UTF-8 text, one token group per line, ``\\n`` line endings::

    hemppcat-model
    schema_version 1
    kind <hemppcat|mppca|kplanes>
    d <int>
    k <int>
    J <int>
    L <int>                      # hemppcat only
    end-header
    <payload blocks>
    end

Every numeric value sits on its own line written with Python ``repr(float)``,
the shortest decimal string that parses back to the identical double, so a
save/load round trip is bitwise exact.  Matrices are written column-major.
Payload blocks, in order:

* ``hemppcat``: ``pi`` (J values), ``v`` (L values), then for j = 1..J a
  ``mu j`` block (d values) and an ``F j`` block (d*k values).
* ``mppca``: ``pi`` (J values), ``v`` (J values, one per mixture), then the
  same ``mu j`` / ``F j`` blocks.
* ``kplanes``: for j = 1..J a ``mu j`` block (d values), a ``U j`` block
  (d*k values, orthonormal basis), a ``scale j`` block (k singular values)
  and a ``count j`` line holding the integer cluster size.

Dataset CSV
-----------
Header row required.  ``group`` (1-based noise group) is mandatory, ``label``
(1-based mixture) optional, every other column is a feature in file order.
"""

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

VARIANCE_FLOOR = 1e-9
SIMPLEX_TOL = 1e-12
SCHEMA_VERSION = 1
MAGIC = "hemppcat-model"


class InvalidParamsError(ValueError):
    """Parameters violate a model invariant."""


class ModelFormatError(ValueError):
    """A model or dataset file could not be parsed."""


class DegenerateFitError(RuntimeError):
    """Base class for fits that cannot continue."""


class EmptyComponentError(DegenerateFitError):
    """A mixture component lost all of its responsibility mass."""


class RankDeficientMomentsError(DegenerateFitError):
    """The weighted latent second-moment matrix of a component is singular."""


def _frozen(a, ndim=None, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    if ndim is not None and a.ndim != ndim:
        raise InvalidParamsError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Hyper:
    d: int
    k: int
    J: int
    L: int = 1

    def __post_init__(self):
        for name in ("d", "k", "J", "L"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise InvalidParamsError(f"{name} must be a positive integer, got {value}")
            object.__setattr__(self, name, int(value))
        if not self.k < self.d:
            raise InvalidParamsError(f"need 1 <= k < d, got k={self.k}, d={self.d}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """``n`` samples tagged with their noise group and, optionally, true labels."""

    samples: np.ndarray
    groups: np.ndarray
    labels: np.ndarray = None
    n_groups: int = None
    allow_empty_groups: bool = False

    def __post_init__(self):
        samples = _frozen(self.samples, ndim=2)
        groups = _frozen(self.groups, ndim=1, dtype=np.int64)
        if len(groups) != len(samples):
            raise ValueError("samples and groups differ in length")
        if len(samples) == 0:
            raise ValueError("a dataset needs at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        if groups.min() < 0:
            raise ValueError("group indices must be non-negative")
        n_groups = int(groups.max()) + 1 if self.n_groups is None else int(self.n_groups)
        if groups.max() >= n_groups:
            raise ValueError(f"group index {groups.max()} out of range for {n_groups} groups")
        counts = np.bincount(groups, minlength=n_groups)
        if np.any(counts == 0) and not self.allow_empty_groups:
            empty = np.flatnonzero(counts == 0).tolist()
            raise ValueError(f"noise groups without samples: {empty}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "n_groups", n_groups)
        if self.labels is not None:
            labels = _frozen(self.labels, ndim=1, dtype=np.int64)
            if len(labels) != len(samples):
                raise ValueError("labels and samples differ in length")
            if labels.min() < 0:
                raise ValueError("labels must be non-negative")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def d(self):
        return self.samples.shape[1]

    def group_counts(self):
        return np.bincount(self.groups, minlength=self.n_groups)

    def subset(self, index, allow_empty_groups=False):
        index = np.asarray(index)
        return Dataset(
            self.samples[index],
            self.groups[index],
            None if self.labels is None else self.labels[index],
            n_groups=self.n_groups,
            allow_empty_groups=allow_empty_groups,
        )


@dataclass(frozen=True, eq=False)
class ModelParams:
    """HeMPPCAT parameters: factors ``F`` (J, d, k), means ``mu`` (J, d),
    per-group noise variances ``v`` (L,) and mixing proportions ``pi`` (J,)."""

    F: np.ndarray
    mu: np.ndarray
    v: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "F", _frozen(self.F, ndim=3))
        object.__setattr__(self, "mu", _frozen(self.mu, ndim=2))
        object.__setattr__(self, "v", _frozen(self.v, ndim=1))
        object.__setattr__(self, "pi", _frozen(self.pi, ndim=1))

    @property
    def hyper(self):
        J, d, k = self.F.shape
        return Hyper(d=d, k=k, J=J, L=len(self.v))

    def variance_table(self):
        """(L, J) table of the noise variance seen by mixture j in group l."""
        return np.repeat(self.v[:, None], len(self.pi), axis=1)


@dataclass(frozen=True, eq=False)
class MppcaParams:
    """Classical MPPCA parameters: one noise variance per mixture."""

    F: np.ndarray
    mu: np.ndarray
    v: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "F", _frozen(self.F, ndim=3))
        object.__setattr__(self, "mu", _frozen(self.mu, ndim=2))
        object.__setattr__(self, "v", _frozen(self.v, ndim=1))
        object.__setattr__(self, "pi", _frozen(self.pi, ndim=1))

    @property
    def hyper(self):
        J, d, k = self.F.shape
        return Hyper(d=d, k=k, J=J, L=1)

    def variance_table(self):
        return self.v[None, :].copy()


@dataclass(frozen=True, eq=False)
class KPlanesState:
    """Affine subspaces found by K-Planes.

    ``bases`` (J, d, k) are orthonormal, ``means`` (J, d) the offsets,
    ``scales`` (J, k) the top singular values of each centred cluster and
    ``counts`` the cluster sizes.  ``assignment`` and ``objective_trace`` are
    only present on freshly fitted states.
    """

    bases: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    counts: np.ndarray
    assignment: np.ndarray = None
    objective_trace: tuple = ()
    iterations: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bases", _frozen(self.bases, ndim=3))
        object.__setattr__(self, "means", _frozen(self.means, ndim=2))
        object.__setattr__(self, "scales", _frozen(self.scales, ndim=2))
        object.__setattr__(self, "counts", _frozen(self.counts, ndim=1, dtype=np.int64))
        if self.assignment is not None:
            object.__setattr__(
                self, "assignment", _frozen(self.assignment, ndim=1, dtype=np.int64)
            )
        object.__setattr__(self, "objective_trace", tuple(float(x) for x in self.objective_trace))

    @property
    def objective(self):
        return self.objective_trace[-1] if self.objective_trace else math.nan

    @property
    def hyper(self):
        J, d, k = self.bases.shape
        return Hyper(d=d, k=k, J=J, L=1)

    def factors(self):
        """Factor-like matrices ``U_j diag(s_j) / sqrt(n_j - 1)`` whose gram
        estimates each cluster's covariance."""
        denom = np.sqrt(np.maximum(self.counts - 1, 1)).astype(float)
        return self.bases * (self.scales / denom[:, None])[:, None, :]


STOP_REASONS = ("tolerance", "max_iters", "degenerate")


@dataclass(frozen=True)
class FitReport:
    """``ll_trace[0]`` is the log-likelihood at the starting point and
    ``ll_trace[t]`` the value after sweep ``t``; ``iterations`` counts sweeps."""

    ll_trace: tuple
    iterations: int
    converged: bool
    stop_reason: str
    message: str = ""
    elapsed: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.stop_reason not in STOP_REASONS:
            raise ValueError(f"unknown stop reason {self.stop_reason!r}")
        object.__setattr__(self, "ll_trace", tuple(float(x) for x in self.ll_trace))

    def to_dict(self):
        return {
            "ll_trace": list(self.ll_trace),
            "iterations": self.iterations,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "message": self.message,
        }


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def _check_simplex(pi):
    if np.any(~np.isfinite(pi)) or np.any(pi < 0):
        raise InvalidParamsError("mixing proportions must be non-negative")
    if abs(pi.sum() - 1.0) > SIMPLEX_TOL:
        raise InvalidParamsError(f"mixing proportions sum to {pi.sum():.17g}, not 1")


def _check_variances(v):
    if np.any(~np.isfinite(v)):
        raise InvalidParamsError("noise variances must be finite")
    if np.any(v < 0):
        raise InvalidParamsError("negative noise variance")
    if np.any(v < VARIANCE_FLOOR):
        raise InvalidParamsError(f"noise variance below the floor {VARIANCE_FLOOR:g}")


def validate_params(params, hyper):
    """Raise :class:`InvalidParamsError` unless ``params`` is consistent with
    ``hyper`` and satisfies the model invariants."""
    J, d, k = hyper.J, hyper.d, hyper.k
    if isinstance(params, KPlanesState):
        if params.bases.shape != (J, d, k) or params.means.shape != (J, d):
            raise InvalidParamsError("K-Planes state does not match hyperparameters")
        gram = np.einsum("jdk,jdl->jkl", params.bases, params.bases)
        if np.abs(gram - np.eye(k)).max() > 1e-8:
            raise InvalidParamsError("K-Planes bases are not orthonormal")
        return
    if params.F.shape != (J, d, k):
        raise InvalidParamsError(f"factor shape {params.F.shape} != {(J, d, k)}")
    if params.mu.shape != (J, d):
        raise InvalidParamsError(f"mean shape {params.mu.shape} != {(J, d)}")
    if params.pi.shape != (J,):
        raise InvalidParamsError(f"expected {J} mixing proportions, got {params.pi.shape}")
    n_var = J if isinstance(params, MppcaParams) else hyper.L
    if params.v.shape != (n_var,):
        raise InvalidParamsError(f"expected {n_var} noise variances, got {params.v.shape}")
    if not (np.all(np.isfinite(params.F)) and np.all(np.isfinite(params.mu))):
        raise InvalidParamsError("factors and means must be finite")
    _check_variances(params.v)
    _check_simplex(params.pi)


# -- model files -----------------------------------------------------------


def _fmt(x):
    return repr(float(x))


def dumps_model(params, hyper=None):
    hyper = params.hyper if hyper is None else hyper
    validate_params(params, hyper)
    if isinstance(params, ModelParams):
        kind = "hemppcat"
    elif isinstance(params, MppcaParams):
        kind = "mppca"
    elif isinstance(params, KPlanesState):
        kind = "kplanes"
    else:
        raise TypeError(f"cannot serialise {type(params).__name__}")
    lines = [MAGIC, f"schema_version {SCHEMA_VERSION}", f"kind {kind}"]
    lines += [f"d {hyper.d}", f"k {hyper.k}", f"J {hyper.J}"]
    if kind == "hemppcat":
        lines.append(f"L {hyper.L}")
    lines.append("end-header")

    def block(name, values):
        lines.append(name)
        lines.extend(_fmt(x) for x in values)

    if kind == "kplanes":
        for j in range(hyper.J):
            block(f"mu {j + 1}", params.means[j])
            block(f"U {j + 1}", params.bases[j].ravel(order="F"))
            block(f"scale {j + 1}", params.scales[j])
            lines.append(f"count {j + 1} {int(params.counts[j])}")
    else:
        block("pi", params.pi)
        block("v", params.v)
        for j in range(hyper.J):
            block(f"mu {j + 1}", params.mu[j])
            block(f"F {j + 1}", params.F[j].ravel(order="F"))
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_model(params, hyper, path):
    text = dumps_model(params, hyper)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


class _Lines:
    def __init__(self, text):
        self.lines = text.split("\n")
        if self.lines and self.lines[-1] == "":
            self.lines.pop()
        self.pos = 0

    def next(self):
        if self.pos >= len(self.lines):
            raise ModelFormatError("unexpected end of model file (truncated?)")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def expect(self, token):
        line = self.next()
        if line != token:
            raise ModelFormatError(f"line {self.pos}: expected {token!r}, got {line!r}")

    def keyed_int(self, key):
        parts = self.next().split()
        if len(parts) != 2 or parts[0] != key:
            raise ModelFormatError(f"line {self.pos}: expected '{key} <int>'")
        try:
            return int(parts[1])
        except ValueError:
            raise ModelFormatError(f"line {self.pos}: bad integer {parts[1]!r}") from None

    def floats(self, count):
        out = np.empty(count)
        for i in range(count):
            line = self.next()
            try:
                out[i] = float(line)
            except ValueError:
                raise ModelFormatError(f"line {self.pos}: bad number {line!r}") from None
        return out


def loads_model(text):
    """Parse a model file; returns ``(params, hyper)``."""
    src = _Lines(text)
    src.expect(MAGIC)
    version = src.keyed_int("schema_version")
    if version != SCHEMA_VERSION:
        raise ModelFormatError(f"unsupported schema version {version}")
    parts = src.next().split()
    if len(parts) != 2 or parts[0] != "kind" or parts[1] not in ("hemppcat", "mppca", "kplanes"):
        raise ModelFormatError("missing or unknown model kind")
    kind = parts[1]
    d, k, J = src.keyed_int("d"), src.keyed_int("k"), src.keyed_int("J")
    L = src.keyed_int("L") if kind == "hemppcat" else 1
    src.expect("end-header")
    try:
        hyper = Hyper(d=d, k=k, J=J, L=L)
    except InvalidParamsError as err:
        raise ModelFormatError(f"invalid header: {err}") from None

    if kind == "kplanes":
        means, bases, scales, counts = [], [], [], []
        for j in range(J):
            src.expect(f"mu {j + 1}")
            means.append(src.floats(d))
            src.expect(f"U {j + 1}")
            bases.append(src.floats(d * k).reshape((d, k), order="F"))
            src.expect(f"scale {j + 1}")
            scales.append(src.floats(k))
            parts = src.next().split()
            if len(parts) != 3 or parts[:2] != ["count", str(j + 1)]:
                raise ModelFormatError(f"line {src.pos}: expected 'count {j + 1} <int>'")
            counts.append(int(parts[2]))
        params = KPlanesState(np.array(bases), np.array(means), np.array(scales), np.array(counts))
    else:
        src.expect("pi")
        pi = src.floats(J)
        src.expect("v")
        v = src.floats(L if kind == "hemppcat" else J)
        mus, Fs = [], []
        for j in range(J):
            src.expect(f"mu {j + 1}")
            mus.append(src.floats(d))
            src.expect(f"F {j + 1}")
            Fs.append(src.floats(d * k).reshape((d, k), order="F"))
        cls = ModelParams if kind == "hemppcat" else MppcaParams
        params = cls(np.array(Fs), np.array(mus), v, pi)
    src.expect("end")
    if src.pos != len(src.lines):
        raise ModelFormatError("trailing content after 'end'")
    validate_params(params, hyper)
    return params, hyper


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())


# -- dataset CSV -----------------------------------------------------------


def save_dataset(dataset, path, feature_names=None):
    names = feature_names or [f"x{i + 1}" for i in range(dataset.d)]
    header = list(names) + ["group"] + (["label"] if dataset.labels is not None else [])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(dataset.n):
            row = [_fmt(x) for x in dataset.samples[i]] + [int(dataset.groups[i]) + 1]
            if dataset.labels is not None:
                row.append(int(dataset.labels[i]) + 1)
            writer.writerow(row)


def load_dataset(path, n_groups=None, allow_empty_groups=False):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ModelFormatError(f"{path}: empty file, header row required")
    header = [h.strip() for h in rows[0]]
    if "group" not in header:
        raise ModelFormatError(f"{path}: no 'group' column")
    body = [r for r in rows[1:] if r]
    if not body:
        raise ModelFormatError(f"{path}: no data rows")
    g_col = header.index("group")
    l_col = header.index("label") if "label" in header else None
    feat = [c for c, h in enumerate(header) if h not in ("group", "label")]
    if not feat:
        raise ModelFormatError(f"{path}: no feature columns")
    try:
        table = [[float(r[c]) for c in feat] for r in body]
        groups = [int(r[g_col]) - 1 for r in body]
        labels = None if l_col is None else [int(r[l_col]) - 1 for r in body]
    except (ValueError, IndexError) as err:
        raise ModelFormatError(f"{path}: malformed row ({err})") from None
    try:
        return Dataset(
            np.array(table), np.array(groups), labels, n_groups, allow_empty_groups
        )
    except ValueError as err:
        raise ModelFormatError(f"{path}: {err}") from None
