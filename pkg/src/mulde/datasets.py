"""Feature file I/O, synthetic Gaussian mixtures, and analytic oracles.

The binary feature format is little-endian: magic ``MFV1``, u32 feature
dimension, u64 row count, then the rows as IEEE-754 32-bit reals in
row-major order. A sidecar CSV index carries per-row identity
(video/frame/object) and optional binary labels. Values are widened to
float64 in memory.

The mixture oracles give exact noisy negative log-densities and scores
for Gaussian mixture ground truth: convolving a mixture with isotropic
Gaussian noise of scale sigma just adds sigma^2 to every component
covariance.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import logsumexp

from .errors import FormatError, UsageError
from .ioutil import write_bytes_atomic, write_text_atomic
from .rng import Rng
from .validation import as_matrix

MAGIC = b"MFV1"
_HEADER = struct.Struct("<4sIQ")

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class FeatureSet:
    """Feature rows plus per-row identity and optional labels.

    ``object_id`` and ``label`` entries are None where absent.
    """

    X: np.ndarray
    video_ids: list = field(default_factory=list)
    frame_indices: np.ndarray = None
    object_ids: list = None
    labels: list = None

    def __post_init__(self):
        self.X = as_matrix(self.X, "X")
        n = self.X.shape[0]
        if not self.video_ids:
            self.video_ids = ["v0"] * n
        if self.frame_indices is None:
            self.frame_indices = np.arange(n, dtype=np.int64)
        self.frame_indices = np.asarray(self.frame_indices, dtype=np.int64)
        if len(self.video_ids) != n or self.frame_indices.shape != (n,):
            raise UsageError("index length does not match the number of rows")
        if self.object_ids is not None and len(self.object_ids) != n:
            raise UsageError("object_ids length does not match the number of rows")
        if self.labels is not None and len(self.labels) != n:
            raise UsageError("labels length does not match the number of rows")
        if np.any(self.frame_indices < 0):
            raise UsageError("frame indices must be nonnegative")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def has_labels(self) -> bool:
        return self.labels is not None and any(l is not None for l in self.labels)

    def label_array(self) -> np.ndarray:
        """Labels as int array; missing labels count as normal (0)."""
        if self.labels is None:
            return np.zeros(self.n_rows, dtype=np.int64)
        return np.array([0 if l is None else int(l) for l in self.labels], dtype=np.int64)


def write_features(fs: FeatureSet, path, index_path=None) -> None:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, fs.dim, fs.n_rows))
    buf.write(np.ascontiguousarray(fs.X, dtype="<f4").tobytes())
    write_bytes_atomic(path, buf.getvalue())
    if index_path is not None:
        write_index(fs, index_path)


def read_features(path, index_path=None) -> FeatureSet:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FormatError(f"truncated header in {path}", offset=len(header))
        magic, dim, n = _HEADER.unpack(header)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r} in {path}", offset=0)
        if dim < 1:
            raise FormatError(f"feature dimension must be positive, got {dim}", offset=4)
        payload = fh.read()
        expected = n * dim * 4
        if len(payload) != expected:
            raise FormatError(
                f"payload holds {len(payload)} bytes, expected {expected} in {path}",
                offset=_HEADER.size + min(len(payload), expected))
    X = np.frombuffer(payload, dtype="<f4").reshape(n, dim).astype(np.float64)
    fs = FeatureSet(X)
    if index_path is not None:
        attach_index(fs, index_path)
    return fs


def write_index(fs: FeatureSet, path) -> None:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["row", "video_id", "frame_index", "object_id", "label"])
    for i in range(fs.n_rows):
        obj = "" if fs.object_ids is None or fs.object_ids[i] is None else fs.object_ids[i]
        lab = "" if fs.labels is None or fs.labels[i] is None else fs.labels[i]
        writer.writerow([i, fs.video_ids[i], int(fs.frame_indices[i]), obj, lab])
    write_text_atomic(path, out.getvalue())


def read_index(path) -> tuple[list, list, list, list]:
    """Parse an index CSV into (video_ids, frames, object_ids, labels)."""
    video_ids, frames, objects, labels = [], [], [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["row", "video_id", "frame_index", "object_id", "label"]:
            raise FormatError(f"unexpected index header {header!r} in {path}")
        for pos, rec in enumerate(reader):
            if len(rec) != 5:
                raise FormatError(f"index row {pos} has {len(rec)} fields in {path}")
            try:
                row = int(rec[0])
                frame = int(rec[2])
                obj = None if rec[3] == "" else int(rec[3])
                lab = None if rec[4] == "" else int(rec[4])
            except ValueError as exc:
                raise FormatError(f"index row {pos}: {exc}") from exc
            if row != pos:
                raise FormatError(f"index row column {row} does not equal position {pos}")
            if lab not in (None, 0, 1):
                raise FormatError(f"index row {pos}: label must be 0 or 1, got {lab}")
            video_ids.append(rec[1])
            frames.append(frame)
            objects.append(obj)
            labels.append(lab)
    return video_ids, frames, objects, labels


def attach_index(fs: FeatureSet, path) -> FeatureSet:
    video_ids, frames, objects, labels = read_index(path)
    if len(video_ids) != fs.n_rows:
        raise FormatError(f"index has {len(video_ids)} rows, features have {fs.n_rows}")
    fs.video_ids = video_ids
    fs.frame_indices = np.asarray(frames, dtype=np.int64)
    fs.object_ids = objects if any(o is not None for o in objects) else None
    fs.labels = labels if any(l is not None for l in labels) else None
    return fs


@dataclass
class MixtureSpec:
    """Ground-truth Gaussian mixture parameters."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        if self.weights.ndim != 1 or self.means.ndim != 2 or self.covariances.ndim != 3:
            raise UsageError("weights/means/covariances must be 1-D/2-D/3-D")
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.covariances.shape != (k, d, d):
            raise UsageError("mixture spec shapes are inconsistent")
        if np.any(self.weights < 0.0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise UsageError("weights must be nonnegative and sum to 1")
        for j, c in enumerate(self.covariances):
            if not np.allclose(c, c.T, atol=1e-12):
                raise UsageError(f"covariance {j} is not symmetric")
            if np.linalg.eigvalsh(c).min() < -1e-12:
                raise UsageError(f"covariance {j} is not positive semidefinite")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def to_json_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "covariances": self.covariances.tolist()}

    @classmethod
    def from_json_dict(cls, doc) -> "MixtureSpec":
        try:
            return cls(doc["weights"], doc["means"], doc["covariances"])
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed mixture spec: {exc}") from exc

    @classmethod
    def load(cls, path) -> "MixtureSpec":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON in {path}: {exc}") from exc
        return cls.from_json_dict(doc)

    def save(self, path) -> None:
        write_text_atomic(path, json.dumps(self.to_json_dict()) + "\n")

    def standardized(self, mean, std) -> "MixtureSpec":
        """The spec of (x - mean)/std when x follows this mixture."""
        mean = np.asarray(mean, dtype=np.float64)
        std = np.asarray(std, dtype=np.float64)
        inv = 1.0 / std
        means = (self.means - mean) * inv
        covs = self.covariances * inv[None, :, None] * inv[None, None, :]
        return MixtureSpec(self.weights, means, covs)


def synth_mixture(spec: MixtureSpec, n: int, seed: int = 0) -> FeatureSet:
    """n iid draws; component choice first (n uniforms), then all normals."""
    n = int(n)
    if n < 0:
        raise UsageError("n must be nonnegative")
    rng = Rng(seed)
    comp = rng.choice_weighted(np.cumsum(spec.weights), n) if n else np.empty(0, dtype=int)
    z = rng.normal((n, spec.dim))
    X = np.empty((n, spec.dim))
    for k in range(spec.n_components):
        # eigh-based factor tolerates singular PSD covariances
        evals, evecs = np.linalg.eigh(spec.covariances[k])
        factor = evecs * np.sqrt(np.clip(evals, 0.0, None))
        rows = comp == k
        X[rows] = spec.means[k] + z[rows] @ factor.T
    return FeatureSet(X, video_ids=["synth"] * n)


def _noisy_chols(spec: MixtureSpec, sigma: float):
    sigma = float(sigma)
    if sigma < 0.0 or not np.isfinite(sigma):
        raise UsageError("sigma must be nonnegative and finite")
    eye = np.eye(spec.dim)
    return [cholesky(c + sigma * sigma * eye, lower=True) for c in spec.covariances]


def _component_log_densities(spec, chols, X):
    out = np.empty((X.shape[0], spec.n_components))
    for k, chol in enumerate(chols):
        solved = solve_triangular(chol, (X - spec.means[k]).T, lower=True)
        maha = np.sum(solved * solved, axis=0)
        log_det = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, k] = np.log(spec.weights[k]) - 0.5 * (spec.dim * _LOG_2PI + log_det + maha)
    return out


def oracle_neg_log_density(spec: MixtureSpec, sigma: float, x) -> np.ndarray | float:
    """Exact -log of the mixture density after adding noise of scale sigma."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = as_matrix(x[None, :] if single else x, "x")
    if X.shape[1] != spec.dim:
        raise UsageError(f"x has dimension {X.shape[1]}, spec expects {spec.dim}")
    logs = logsumexp(_component_log_densities(spec, _noisy_chols(spec, sigma), X), axis=1)
    return float(-logs[0]) if single else -logs


def oracle_score(spec: MixtureSpec, sigma: float, x) -> np.ndarray:
    """Exact gradient of the noisy negative log-density at x.

    Equals the responsibility-weighted sum of (Sigma_k + sigma^2 I)^{-1}
    (x - mu_k) over components.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = as_matrix(x[None, :] if single else x, "x")
    if X.shape[1] != spec.dim:
        raise UsageError(f"x has dimension {X.shape[1]}, spec expects {spec.dim}")
    chols = _noisy_chols(spec, sigma)
    logdens = _component_log_densities(spec, chols, X)
    resp = np.exp(logdens - logsumexp(logdens, axis=1)[:, None])
    out = np.zeros_like(X)
    for k, chol in enumerate(chols):
        diff = X - spec.means[k]
        solved = solve_triangular(chol, diff.T, lower=True)
        precision_diff = solve_triangular(chol.T, solved, lower=False).T
        out += resp[:, k][:, None] * precision_diff
    return out[0] if single else out


def toy_mixture_spec() -> MixtureSpec:
    """2-D benchmark mixture: four equal isotropic modes at (+-3, +-3)."""
    means = np.array([[3.0, 3.0], [3.0, -3.0], [-3.0, 3.0], [-3.0, -3.0]])
    covs = np.repeat(0.25 * np.eye(2)[None, :, :], 4, axis=0)
    return MixtureSpec(np.full(4, 0.25), means, covs)


def sample_toy_anomalies(n: int, seed: int = 0, exclusion_radius: float = 1.5) -> np.ndarray:
    """Uniform draws on [-6, 6]^2 excluding balls around the toy modes."""
    spec = toy_mixture_spec()
    rng = Rng(seed)
    out = np.empty((n, 2))
    filled = 0
    while filled < n:
        cand = rng.uniform((max(2 * (n - filled), 16), 2)) * 12.0 - 6.0
        dists = np.linalg.norm(cand[:, None, :] - spec.means[None, :, :], axis=2)
        keep = cand[(dists > exclusion_radius).all(axis=1)]
        take = min(len(keep), n - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out
