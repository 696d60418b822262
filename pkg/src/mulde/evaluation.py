"""Frame-level ROC evaluation with micro and macro aggregation.

AUC is the Mann-Whitney statistic with ties credited 0.5, computed from
one sort via tie-averaged ranks. The O(n^2) pairwise definition lives in
the tests as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetric, UsageError
from .gmm import build_multiscale_vectors
from .validation import as_matrix


@dataclass
class LabeledSeries:
    """Per-frame scores and binary labels for one video (1 = anomalous)."""

    video_id: str
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.ndim != 1 or self.scores.shape != self.labels.shape:
            raise UsageError(f"scores and labels must be 1-D and equally long for {self.video_id!r}")
        if self.scores.shape[0] == 0:
            raise UsageError(f"video {self.video_id!r} has no frames")
        if not np.isin(self.labels, (0, 1)).all():
            raise UsageError(f"labels must be 0 or 1 for {self.video_id!r}")


@dataclass
class EvalReport:
    micro_auc: float
    macro_auc: float
    per_video_auc: list
    n_videos_excluded: int

    def to_json_dict(self) -> dict:
        return {
            "micro_auc": self.micro_auc,
            "macro_auc": self.macro_auc,
            "per_video_auc": [{"video_id": vid, "auc": auc} for vid, auc in self.per_video_auc],
            "n_videos_excluded": self.n_videos_excluded,
        }


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve; ties between classes count half.

    Raises UndefinedMetric when only one class is present, so the caller
    decides whether to exclude or fail.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise UsageError("scores and labels must be 1-D and equally long")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = scores.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC undefined: labels contain a single class")
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def micro_auc(videos) -> float:
    """AUC over the concatenated frames of all videos."""
    if not videos:
        raise UsageError("no videos to evaluate")
    scores = np.concatenate([v.scores for v in videos])
    labels = np.concatenate([v.labels for v in videos])
    return roc_auc(scores, labels)


def macro_auc(videos) -> tuple[float, list]:
    """Mean of per-video AUCs; single-class videos are excluded.

    Returns (macro, excluded_video_ids).
    """
    if not videos:
        raise UsageError("no videos to evaluate")
    aucs, excluded = [], []
    for v in videos:
        try:
            aucs.append(roc_auc(v.scores, v.labels))
        except UndefinedMetric:
            excluded.append(v.video_id)
    if not aucs:
        raise UndefinedMetric("macro AUC undefined: no video has both classes")
    return float(np.mean(aucs)), excluded


def evaluate(videos) -> EvalReport:
    """Full report: micro, macro, per-video AUCs with exclusions."""
    micro = micro_auc(videos)
    per_video = []
    for v in videos:
        try:
            per_video.append((v.video_id, roc_auc(v.scores, v.labels)))
        except UndefinedMetric:
            per_video.append((v.video_id, None))
    present = [auc for _, auc in per_video if auc is not None]
    if not present:
        raise UndefinedMetric("macro AUC undefined: no video has both classes")
    return EvalReport(
        micro_auc=micro,
        macro_auc=float(np.mean(present)),
        per_video_auc=per_video,
        n_videos_excluded=sum(1 for _, auc in per_video if auc is None),
    )


def sweep_single_sigma(net, schedule, standardizer, X, labels) -> list[tuple[float, float]]:
    """Micro AUC using the raw energy at each schedule scale as the score.

    Bypasses the mixture entirely; reproduces the single-noise-scale
    performance curve that motivates aggregating across scales.
    """
    X = as_matrix(X, "X")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (X.shape[0],):
        raise UsageError("labels must align with feature rows")
    Z = standardizer.transform(X)
    V = build_multiscale_vectors(net, Z, schedule)
    out = []
    for j, sigma in enumerate(schedule.scales):
        out.append((float(sigma), roc_auc(V[:, j], labels)))
    return out
