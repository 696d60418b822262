"""End-to-end scoring: standardization, pooling, fusion, smoothing.

All operations here are read-only over fitted models, so rows and videos
can be processed independently.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, UsageError
from .gmm import build_multiscale_vectors
from .validation import as_matrix, check_dim, check_positive

POOL_MODES = ("max", "avg", "median")


class Standardizer:
    """Component-wise (x - mean) / std with a floor on the std.

    Statistics come from the training set only; the same transform is
    applied at train and test time. Follows the fit/transform estimator
    protocol.
    """

    def __init__(self, epsilon=1e-8):
        self.epsilon = check_positive(epsilon, "epsilon")
        self.mean = None
        self.std = None

    def fit(self, X) -> "Standardizer":
        X = as_matrix(X, "X")
        if X.shape[0] == 0:
            raise UsageError("cannot fit a standardizer on an empty set")
        self.mean = X.mean(axis=0)
        self.std = np.maximum(X.std(axis=0), self.epsilon)
        return self

    def _check_fitted(self):
        if self.mean is None:
            raise UsageError("standardizer is not fitted")

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        check_dim(X, self.mean.shape[0], "X")
        return (X - self.mean) / self.std

    def fit_transform(self, X) -> np.ndarray:
        return self.fit(X).transform(X)

    def to_json_dict(self) -> dict:
        self._check_fitted()
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "epsilon": self.epsilon}

    @classmethod
    def from_json_dict(cls, doc) -> "Standardizer":
        s = cls(epsilon=doc.get("epsilon", 1e-8))
        s.mean = np.asarray(doc["mean"], dtype=np.float64)
        s.std = np.asarray(doc["std"], dtype=np.float64)
        return s


def fit_standardizer(X, epsilon=1e-8) -> Standardizer:
    return Standardizer(epsilon).fit(X)


@dataclass
class ScoreSeries:
    """Per-frame scores for one video, frame-index ordered."""

    video_id: str
    scores: np.ndarray
    smoothed: bool = False
    smoothing_std: float = 0.0

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 1 or self.scores.shape[0] == 0:
            raise UsageError("scores must be a nonempty 1-D sequence")
        if not np.isfinite(self.scores).all():
            raise UsageError(f"scores for video {self.video_id!r} contain non-finite values")


def score_rows(net, gmm, schedule, standardizer: Standardizer, X) -> np.ndarray:
    """Anomaly score per raw feature row: standardize, evaluate the energy
    at all schedule scales, take the mixture negative log-likelihood."""
    X = as_matrix(X, "X")
    if X.shape[0] == 0:
        return np.empty(0)
    Z = standardizer.transform(X)
    V = build_multiscale_vectors(net, Z, schedule)
    if V.shape[1] != gmm.dim:
        raise DimensionError(f"schedule has {V.shape[1]} scales, mixture expects {gmm.dim}")
    return gmm.nll_batch(V)


def pool_objects_to_frames(row_scores, row_index, frame_counts) -> dict[str, ScoreSeries]:
    """Max-pool object scores into per-frame series, one per video.

    ``row_index`` holds one (video_id, frame_index) pair per score;
    ``frame_counts`` maps each video to its declared frame count. Frames
    with no detections take the minimum row score observed in their
    video, since missing detections carry no anomaly evidence.
    """
    row_scores = np.asarray(row_scores, dtype=np.float64)
    if row_scores.shape[0] != len(row_index):
        raise UsageError("row_scores and row_index lengths differ")
    per_video: dict[str, dict[int, float]] = {}
    row_min: dict[str, float] = {}
    for score, (video_id, frame) in zip(row_scores, row_index):
        frame = int(frame)
        count = frame_counts.get(video_id)
        if count is None:
            raise UsageError(f"video {video_id!r} missing from frame_counts")
        if not (0 <= frame < count):
            raise UsageError(f"frame {frame} out of range for video {video_id!r} ({count} frames)")
        frames = per_video.setdefault(video_id, {})
        frames[frame] = max(frames.get(frame, -np.inf), float(score))
        row_min[video_id] = min(row_min.get(video_id, np.inf), float(score))
    out = {}
    for video_id, count in frame_counts.items():
        frames = per_video.get(video_id)
        if not frames:
            raise UsageError(f"video {video_id!r} has no scored rows")
        series = np.full(int(count), row_min[video_id])
        for frame, value in frames.items():
            series[frame] = value
        out[video_id] = ScoreSeries(video_id, series)
    return out


def fuse_feature_types(type_scores: dict, type_stats: dict, epsilon=1e-8) -> np.ndarray:
    """Combine per-frame scores from several feature types.

    Each type's scores are z-scored against that type's training-score
    statistics, clipped below zero (negative means more normal than the
    training average), and summed across types.
    """
    if not type_scores:
        raise UsageError("no feature types to fuse")
    fused = None
    length = None
    for name, scores in type_scores.items():
        scores = np.asarray(scores, dtype=np.float64)
        if scores.ndim != 1:
            raise DimensionError(f"scores for type {name!r} must be 1-D")
        if length is None:
            length = scores.shape[0]
            fused = np.zeros(length)
        elif scores.shape[0] != length:
            raise UsageError(f"type {name!r} covers {scores.shape[0]} frames, expected {length}")
        if name not in type_stats:
            raise UsageError(f"missing training stats for type {name!r}")
        mean, std = type_stats[name]
        z = (scores - float(mean)) / max(float(std), epsilon)
        fused += np.clip(z, 0.0, None)
    return fused


def training_score_stats(scores) -> tuple[float, float]:
    """(mean, population std) of training scores, for fusion."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise UsageError("cannot compute stats of an empty score set")
    return float(scores.mean()), float(scores.std())


def gaussian_kernel(kernel_std: float) -> np.ndarray:
    """Discrete Gaussian kernel truncated at +-ceil(3*std), summing to 1."""
    kernel_std = float(kernel_std)
    if kernel_std < 0.0:
        raise UsageError("kernel_std must be nonnegative")
    if kernel_std == 0.0:
        return np.ones(1)
    radius = int(np.ceil(3.0 * kernel_std))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / kernel_std) ** 2)
    return kernel / kernel.sum()


def smooth_series(series: ScoreSeries, kernel_std: float) -> ScoreSeries:
    """Temporal Gaussian smoothing with reflected boundaries."""
    kernel = gaussian_kernel(kernel_std)
    if kernel.size == 1:
        return replace(series, smoothed=True, smoothing_std=float(kernel_std))
    radius = kernel.size // 2
    padded = np.pad(series.scores, radius, mode="reflect")
    smoothed = np.convolve(padded, kernel, mode="valid")
    return ScoreSeries(series.video_id, smoothed, smoothed=True,
                       smoothing_std=float(kernel_std))


def multiscale_stats(vectors) -> tuple[np.ndarray, np.ndarray]:
    """Per-scale (mean, population std) of training multiscale vectors."""
    V = as_matrix(vectors, "vectors")
    if V.shape[0] == 0:
        raise UsageError("cannot compute stats of an empty vector set")
    return V.mean(axis=0), V.std(axis=0)


def pool_multiscale(vectors, stats, mode: str, epsilon=1e-8) -> np.ndarray:
    """Mixture-free aggregation: z-score each scale column by its training
    statistics, then max/avg/median-pool per row."""
    if mode not in POOL_MODES:
        raise UsageError(f"unknown pooling mode {mode!r}; expected one of {POOL_MODES}")
    V = as_matrix(vectors, "vectors")
    mean, std = stats
    mean = np.asarray(mean, dtype=np.float64)
    std = np.maximum(np.asarray(std, dtype=np.float64), epsilon)
    check_dim(V, mean.shape[0], "vectors")
    Z = (V - mean) / std
    if mode == "max":
        return Z.max(axis=1)
    if mode == "avg":
        return Z.mean(axis=1)
    return np.median(Z, axis=1)


def gradient_norm_vectors(net, schedule, standardizer: Standardizer, X) -> np.ndarray:
    """Per-row, per-scale norms of the energy input gradient, (N, L).

    The norm of the learned score field is the aggregation-ready quantity
    behind the gradient-norm baseline; unlike the energy it cannot see a
    constant offset, and it vanishes at every stationary point.
    """
    X = as_matrix(X, "X")
    Z = standardizer.transform(X)
    out = np.empty((X.shape[0], schedule.n_scales))
    if X.shape[0] == 0:
        return out
    for j, sigma in enumerate(schedule.scales):
        grad = net.input_gradient_batch(Z, float(sigma))
        out[:, j] = np.linalg.norm(grad, axis=1)
    return out


def gradient_norm_score(net, schedule, standardizer: Standardizer, X, *,
                        stats=None, mode="avg", gmm=None) -> np.ndarray:
    """Gradient-norm baseline scores per row.

    Aggregates the per-scale norm vectors either with a fitted mixture
    (``gmm``) or by z-scored pooling against training stats.
    """
    V = gradient_norm_vectors(net, schedule, standardizer, X)
    if gmm is not None:
        if V.shape[1] != gmm.dim:
            raise DimensionError(f"schedule has {V.shape[1]} scales, mixture expects {gmm.dim}")
        return gmm.nll_batch(V)
    if stats is None:
        raise UsageError("provide either training stats or a fitted mixture")
    return pool_multiscale(V, stats, mode)
