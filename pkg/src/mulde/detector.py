"""Scikit-learn style front end tying the pieces into one estimator.

``MuldeDetector.fit(X)`` standardizes normal-only features, trains the
energy network with the gradient-regression objective, evaluates every
training row at the noise schedule, and fits the aggregating mixture.
Scoring follows the sklearn outlier-detector conventions so the model
composes with pipelines and model selection: ``score_samples`` is higher
for more normal inputs, ``predict`` returns +1 inliers / -1 outliers.
The raw anomaly score (mixture negative log-likelihood, higher = more
anomalous) is exposed via :meth:`anomaly_score`.
"""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .gmm import NoiseSchedule, build_multiscale_vectors, fit_em
from .pipeline import Standardizer
from .trainer import TrainConfig, train
from .energy_net import EnergyNet


class MuldeDetector(OutlierMixin, BaseEstimator):
    """Multiscale log-density anomaly detector.

    Parameters mirror the training configuration; ``contamination`` sets
    the decision threshold as a quantile of the training scores.
    """

    def __init__(self, hidden_widths=(4096, 4096), learning_rate=5e-4,
                 batch_size=2048, max_epochs=100, beta_reg=0.1,
                 sigma_low=1e-3, sigma_high=1.0, n_scales=16,
                 n_components=5, em_max_iters=500, em_tol=1e-7, ridge=None,
                 contamination=0.1, random_state=0):
        self.hidden_widths = hidden_widths
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.beta_reg = beta_reg
        self.sigma_low = sigma_low
        self.sigma_high = sigma_high
        self.n_scales = n_scales
        self.n_components = n_components
        self.em_max_iters = em_max_iters
        self.em_tol = em_tol
        self.ridge = ridge
        self.contamination = contamination
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            beta_reg=self.beta_reg,
            sigma_low=self.sigma_low,
            sigma_high=self.sigma_high,
            n_scales=self.n_scales,
            max_epochs=self.max_epochs,
            hidden_widths=tuple(self.hidden_widths),
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        """Fit on normal-only data; y is ignored (one-class training)."""
        X = check_array(X, dtype=np.float64, ensure_min_samples=max(2, int(self.n_components)))
        if not isinstance(self.contamination, numbers.Real) or not (0.0 <= self.contamination < 1.0):
            raise ValueError("contamination must lie in [0, 1)")
        config = self._train_config()
        self.n_features_in_ = X.shape[1]
        self.standardizer_ = Standardizer().fit(X)
        Z = self.standardizer_.transform(X)
        net0 = EnergyNet.initialize(
            feature_dim=X.shape[1], hidden_widths=config.hidden_widths,
            sigma_low=config.sigma_low, sigma_high=config.sigma_high,
            seed=config.seed)
        self.net_, self.loss_history_ = train(Z, net0, config)
        self.schedule_ = NoiseSchedule.for_net(self.net_, config.n_scales)
        vectors = build_multiscale_vectors(self.net_, Z, self.schedule_)
        self.gmm_, self.em_trace_ = fit_em(
            vectors, self.n_components, max_iters=self.em_max_iters,
            tol=self.em_tol, ridge=self.ridge, seed=self.random_state)
        train_scores = self.gmm_.nll_batch(vectors)
        self.offset_ = -float(np.quantile(train_scores, 1.0 - self.contamination)) \
            if self.contamination > 0 else -float(train_scores.max())
        return self

    def anomaly_score(self, X) -> np.ndarray:
        """Mixture negative log-likelihood per row; higher = more anomalous."""
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        Z = self.standardizer_.transform(X)
        V = build_multiscale_vectors(self.net_, Z, self.schedule_)
        return self.gmm_.nll_batch(V)

    def score_samples(self, X) -> np.ndarray:
        return -self.anomaly_score(X)

    def decision_function(self, X) -> np.ndarray:
        return self.score_samples(X) - self.offset_

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) < 0.0, -1, 1)
