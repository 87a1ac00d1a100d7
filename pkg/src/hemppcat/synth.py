"""Synthetic data: model sampling, the factor-error benchmark setup, and
feature-point trajectories with the group-wise noise protocol."""

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from ._rng import stream
from .model import Dataset, ModelFormatError, ModelParams


def _rng(seed_or_rng, *keys):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return stream(seed_or_rng, *keys)


def random_stiefel(d, k, seed=0):
    """A d x k matrix with orthonormal columns, Haar distributed.

    QR of an i.i.d. Gaussian matrix, with columns sign-flipped so that R has
    a positive diagonal (this makes the map to Q unique and the result
    exactly uniform).  ``seed`` may also be a ``numpy.random.Generator``.
    """
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    rng = _rng(seed, "stiefel")
    Q, R = np.linalg.qr(rng.standard_normal((d, k)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


@dataclass(frozen=True)
class SynthConfig:
    """Sample-count layout and noise levels for :func:`generate`.

    ``counts[l][j]`` samples come from mixture j in noise group l.
    ``spectrum`` is either one length-k vector shared by all mixtures or a
    (J, k) array; factors are ``U_j diag(sqrt(spectrum_j))``.
    """

    d: int
    k: int
    counts: tuple
    spectrum: tuple
    variances: tuple
    seed: int = 0
    mean_low: float = 0.0
    mean_high: float = 1.0

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or np.any(counts < 0) or counts.sum() == 0:
            raise ValueError("counts must be a non-negative (L, J) integer table")
        if np.any(counts.sum(axis=1) == 0):
            raise ValueError("every noise group needs at least one sample")
        object.__setattr__(self, "counts", tuple(tuple(int(c) for c in row) for row in counts))
        L, J = counts.shape
        if not 1 <= self.k < self.d:
            raise ValueError("need 1 <= k < d")
        spec = np.atleast_2d(np.asarray(self.spectrum, dtype=float))
        if spec.shape not in ((1, self.k), (J, self.k)):
            raise ValueError(f"spectrum must have shape ({self.k},) or ({J}, {self.k})")
        if np.any(spec <= 0) or np.any(np.diff(spec, axis=1) > 0):
            raise ValueError("spectrum entries must be positive and non-increasing")
        if len(self.variances) != L or any(v < 0 for v in self.variances):
            raise ValueError(f"need {L} non-negative variances")
        object.__setattr__(self, "variances", tuple(float(v) for v in self.variances))

    @property
    def L(self):
        return len(self.counts)

    @property
    def J(self):
        return len(self.counts[0])

    @property
    def n(self):
        return int(np.sum(self.counts))

    def spectra(self):
        spec = np.atleast_2d(np.asarray(self.spectrum, dtype=float))
        return np.repeat(spec, self.J, axis=0) if spec.shape[0] == 1 else spec


def paper_config(v1=1.0, seed=0):
    """The heteroscedastic benchmark layout: n = 1000 samples in d = 100,
    k = 3, J = 3, L = 2, spectrum (16, 9, 4), group 2 variance 1.

    Group 1 holds 800 samples (250, 250, 300 from mixtures 1-3) with
    variance ``v1``; group 2 holds 200 (50, 100, 50).
    """
    return SynthConfig(
        d=100,
        k=3,
        counts=((250, 250, 300), (50, 100, 50)),
        spectrum=(16.0, 9.0, 4.0),
        variances=(float(v1), 1.0),
        seed=seed,
    )


def generate_model(config):
    """Ground-truth factors and means drawn from the ``model`` stream."""
    rng = stream(config.seed, "model")
    spectra = config.spectra()
    F = np.stack([random_stiefel(config.d, config.k, rng) * np.sqrt(s) for s in spectra])
    mu = rng.uniform(config.mean_low, config.mean_high, size=(config.J, config.d))
    counts = np.asarray(config.counts)
    return ModelParams(F, mu, np.array(config.variances), counts.sum(axis=0) / counts.sum())


def generate(config):
    """Draw a dataset from the model and return ``(dataset, truth)``.

    Samples are ordered by noise group, then by mixture.  Coefficients and
    noise come from their own streams, so configs differing only in
    ``variances`` share the same coefficients and standardised noise.
    """
    truth = generate_model(config)
    counts = np.asarray(config.counts)
    groups = np.repeat(np.arange(config.L), counts.sum(axis=1))
    labels = np.concatenate([np.repeat(np.arange(config.J), row) for row in counts])
    n = config.n
    z = stream(config.seed, "coefficients").standard_normal((n, config.k))
    eps = stream(config.seed, "noise").standard_normal((n, config.d))
    Y = (
        np.einsum("ndk,nk->nd", truth.F[labels], z)
        + truth.mu[labels]
        + eps * np.sqrt(np.asarray(config.variances))[groups][:, None]
    )
    return Dataset(Y, groups, labels, n_groups=config.L), truth


def sample_model(params, groups, seed=0):
    """Draw one sample per entry of ``groups`` from a fitted/true model."""
    groups = np.asarray(groups)
    rng = stream(seed, "sample-model")
    n = len(groups)
    J, d, k = params.F.shape
    labels = rng.choice(J, size=n, p=params.pi)
    z = rng.standard_normal((n, k))
    eps = rng.standard_normal((n, d)) * np.sqrt(params.v[groups])[:, None]
    Y = np.einsum("ndk,nk->nd", params.F[labels], z) + params.mu[labels] + eps
    return Dataset(Y, groups, labels, n_groups=len(params.v))


# -- trajectories ----------------------------------------------------------

PAPER_SNR_DB = (-30.0, -25.0, -20.0)
PAPER_SHARES = (0.50, 0.35, 0.15)


@dataclass(frozen=True, eq=False)
class Trajectories:
    """Stacked feature-point tracks: row i is ``[x_1, y_1, ..., x_F, y_F]``."""

    coords: np.ndarray  # (n_points, 2 * n_frames)
    bodies: np.ndarray  # (n_points,) 0-based
    point_ids: tuple = field(default=())

    @property
    def n_frames(self):
        return self.coords.shape[1] // 2


def write_trajectories(path, traj):
    ids = traj.point_ids or tuple(range(1, len(traj.coords) + 1))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["point_id", "frame", "x", "y", "body"])
        for pid, row, body in zip(ids, traj.coords, traj.bodies):
            for f in range(traj.n_frames):
                writer.writerow([pid, f + 1, repr(float(row[2 * f])), repr(float(row[2 * f + 1])), int(body) + 1])


def read_trajectories(path):
    """Parse a ``point_id, frame, x, y, body`` CSV into stacked trajectories.

    Points keep their first-appearance order; frames are sorted.  Every point
    must cover the same frames and carry a single body label.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"point_id", "frame", "x", "y", "body"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ModelFormatError(f"{path}: need columns {sorted(required)}")
        points = {}
        for line, row in enumerate(reader, start=2):
            if row["body"] is None or row["body"].strip() == "":
                raise ModelFormatError(f"{path}:{line}: missing body label")
            try:
                frame, x, y, body = int(row["frame"]), float(row["x"]), float(row["y"]), int(row["body"])
            except (TypeError, ValueError):
                raise ModelFormatError(f"{path}:{line}: malformed row") from None
            entry = points.setdefault(row["point_id"], {"body": body, "frames": {}})
            if entry["body"] != body:
                raise ModelFormatError(f"{path}:{line}: point {row['point_id']} changes body")
            if frame in entry["frames"]:
                raise ModelFormatError(f"{path}:{line}: duplicate frame {frame}")
            entry["frames"][frame] = (x, y)
    if not points:
        raise ModelFormatError(f"{path}: no trajectories")
    frame_sets = {tuple(sorted(p["frames"])) for p in points.values()}
    if len(frame_sets) != 1:
        raise ModelFormatError(f"{path}: points are tracked over inconsistent frame counts")
    frames = frame_sets.pop()
    coords = np.array([[c for f in frames for c in p["frames"][f]] for p in points.values()])
    bodies = np.array([p["body"] - 1 for p in points.values()])
    if bodies.min() < 0:
        raise ModelFormatError(f"{path}: body labels must be 1-based")
    return Trajectories(coords, bodies, tuple(points))


def make_trajectories(points_per_body=(120, 100), n_frames=20, seed=0, image_scale=1.0):
    """Rigid bodies moving in front of an affine camera.

    Each body is a cloud of 3-D points with its own smooth rotation and
    translation; the projection keeps the first two rows of the rotated
    coordinates.  Each body's tracks therefore lie in a 3-dimensional affine
    subspace of R^(2 n_frames).
    """
    rng = stream(seed, "trajectories")
    coords, bodies = [], []
    for b, m in enumerate(points_per_body):
        shape = rng.standard_normal((m, 3)) * rng.uniform(0.5, 1.5, size=3)
        omega = rng.standard_normal(3) * 0.08
        velocity = rng.standard_normal(2) * 0.3
        start = rng.uniform(-2.0, 2.0, size=2)
        tracks = np.empty((m, 2 * n_frames))
        base = Rotation.from_rotvec(rng.standard_normal(3))
        for f in range(n_frames):
            R = (Rotation.from_rotvec(omega * f) * base).as_matrix()
            tracks[:, 2 * f : 2 * f + 2] = (shape @ R.T)[:, :2] + start + velocity * f
        coords.append(tracks * image_scale)
        bodies.append(np.full(m, b))
    return Trajectories(np.vstack(coords), np.concatenate(bodies))


def group_sizes(n, shares):
    """Split ``n`` items by ``shares`` using largest remainders."""
    shares = np.asarray(shares, dtype=float)
    if np.any(shares < 0) or not np.isclose(shares.sum(), 1.0):
        raise ValueError("shares must be non-negative and sum to 1")
    raw = shares * n
    sizes = np.floor(raw).astype(int)
    order = np.argsort(-(raw - sizes), kind="stable")
    sizes[order[: n - sizes.sum()]] += 1
    return sizes


def noise_variances(coords, snr_db):
    """``v_l = max_i |y_i|^2 * 10^(snr_l / 10)``; ``-inf`` dB means noiseless."""
    peak = np.max(np.einsum("nd,nd->n", coords, coords))
    return np.array([0.0 if np.isneginf(s) else peak * 10.0 ** (s / 10.0) for s in snr_db])


def add_group_noise(traj, snr_db=PAPER_SNR_DB, shares=PAPER_SHARES, seed=0):
    """Assign tracks to noise groups and add Gaussian noise per group.

    A seeded permutation of the tracks is cut into consecutive blocks of
    sizes :func:`group_sizes`.  Returns ``(dataset, variances)``.
    """
    if len(snr_db) != len(shares):
        raise ValueError("need one SNR per noise group")
    n = len(traj.coords)
    sizes = group_sizes(n, shares)
    perm = stream(seed, "noise-groups").permutation(n)
    groups = np.empty(n, dtype=np.int64)
    groups[perm] = np.repeat(np.arange(len(sizes)), sizes)
    v = noise_variances(traj.coords, snr_db)
    noise = stream(seed, "trajectory-noise").standard_normal(traj.coords.shape)
    Y = traj.coords + noise * np.sqrt(v[groups])[:, None]
    present = np.flatnonzero(sizes > 0)
    remap = np.full(len(sizes), -1)
    remap[present] = np.arange(len(present))
    return Dataset(Y, remap[groups], traj.bodies, n_groups=len(present)), v


def trajectory_ingest(path, snr_db=PAPER_SNR_DB, shares=PAPER_SHARES, seed=0):
    """Read a trajectory CSV and apply the group-wise noise protocol."""
    return add_group_noise(read_trajectories(path), snr_db, shares, seed)[0]


def train_test_split(dataset, train_fraction=0.8, seed=0):
    """Seeded split, stratified by true label, returning ``(train, test)``."""
    if dataset.labels is None:
        raise ValueError("stratified split needs labels")
    rng = stream(seed, "train-test")
    train = []
    for b in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == b)
        idx = idx[rng.permutation(len(idx))]
        train.extend(idx[: int(round(train_fraction * len(idx)))].tolist())
    mask = np.zeros(dataset.n, dtype=bool)
    mask[train] = True
    return (
        dataset.subset(np.flatnonzero(mask)),
        dataset.subset(np.flatnonzero(~mask), allow_empty_groups=True),
    )


def with_variances(config, variances):
    return replace(config, variances=tuple(variances))
