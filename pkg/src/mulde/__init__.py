"""Multiscale log-density estimation for feature-space anomaly detection.

Learns a scalar energy network on noise-perturbed normal features by
regressing its input gradient against denoising targets across a range
of noise scales, then aggregates the per-scale energies of each sample
with a Gaussian mixture whose negative log-likelihood is the anomaly
score.
"""

from .datasets import (FeatureSet, MixtureSpec, oracle_neg_log_density, oracle_score,
                       read_features, read_index, sample_toy_anomalies, synth_mixture,
                       toy_mixture_spec, write_features, write_index)
from .detector import MuldeDetector
from .energy_net import EnergyNet, gelu_derivatives, score_matching_loss
from .errors import (DimensionError, FormatError, MuldeError, NumericError,
                     UndefinedMetric, UsageError)
from .evaluation import EvalReport, LabeledSeries, evaluate, macro_auc, micro_auc, roc_auc, sweep_single_sigma
from .gmm import GaussianMixtureModel, NoiseSchedule, build_multiscale_vectors, fit_em
from .pipeline import (ScoreSeries, Standardizer, fit_standardizer, fuse_feature_types,
                       gaussian_kernel, gradient_norm_score, gradient_norm_vectors,
                       multiscale_stats, pool_multiscale, pool_objects_to_frames,
                       score_rows, smooth_series, training_score_stats)
from .rng import Rng
from .trainer import AdamState, TrainConfig, adam_step, perturb, sample_log_uniform, train

__version__ = "0.1.0"

__all__ = [
    "AdamState", "DimensionError", "EnergyNet", "EvalReport", "FeatureSet",
    "FormatError", "GaussianMixtureModel", "LabeledSeries", "MixtureSpec",
    "MuldeDetector", "MuldeError", "NoiseSchedule", "NumericError", "Rng",
    "ScoreSeries", "Standardizer", "TrainConfig", "UndefinedMetric", "UsageError",
    "adam_step", "build_multiscale_vectors", "evaluate", "fit_em", "fit_standardizer",
    "fuse_feature_types", "gaussian_kernel", "gelu_derivatives", "gradient_norm_score",
    "gradient_norm_vectors", "macro_auc", "micro_auc", "multiscale_stats",
    "oracle_neg_log_density", "oracle_score", "perturb", "pool_multiscale",
    "pool_objects_to_frames", "read_features", "read_index", "roc_auc",
    "sample_log_uniform", "sample_toy_anomalies", "score_matching_loss", "score_rows",
    "smooth_series", "sweep_single_sigma", "synth_mixture", "toy_mixture_spec",
    "train", "training_score_stats", "write_features", "write_index",
]
