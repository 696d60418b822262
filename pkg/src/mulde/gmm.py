"""Multiscale energy vectors and their Gaussian mixture aggregation.

A trained energy network evaluated at L evenly spaced noise scales turns
each feature row into an L-dimensional vector; a full-covariance mixture
fitted to those vectors on normal data provides the final anomaly score
as a negative log-likelihood.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import logsumexp

from .errors import DimensionError, FormatError, UsageError
from .ioutil import write_text_atomic
from .rng import Rng
from .validation import as_matrix, as_vector, check_dim, check_positive

logger = logging.getLogger(__name__)

GMM_FORMAT = "mulde-gmm"
GMM_VERSION = 1

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class NoiseSchedule:
    """L evenly spaced evaluation scales spanning [sigma_low, sigma_high]."""

    sigma_low: float
    sigma_high: float
    n_scales: int = 16
    scales: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        check_positive(self.sigma_low, "sigma_low")
        check_positive(self.sigma_high, "sigma_high")
        if self.sigma_low > self.sigma_high:
            raise UsageError("sigma_low must not exceed sigma_high")
        if int(self.n_scales) < 1:
            raise UsageError("n_scales must be >= 1")
        object.__setattr__(self, "n_scales", int(self.n_scales))
        object.__setattr__(
            self, "scales",
            np.linspace(self.sigma_low, self.sigma_high, self.n_scales))

    @classmethod
    def for_net(cls, net, n_scales=16) -> "NoiseSchedule":
        return cls(net.sigma_low, net.sigma_high, n_scales)


def build_multiscale_vectors(net, X, schedule: NoiseSchedule) -> np.ndarray:
    """Energies of each (standardized) row at every schedule scale, (N, L).

    All (row, scale) pairs of a chunk go through one batched forward pass;
    small per-scale batches would leave the matrix kernels far below peak.
    """
    X = as_matrix(X, "X", dtype=None)
    check_dim(X, net.feature_dim, "X")
    n, L = X.shape[0], schedule.n_scales
    dtype = np.result_type(X.dtype, np.float32)
    out = np.empty((n, L), dtype=dtype)
    if n == 0:
        return out
    cond = net.conditioning_value(schedule.scales).astype(dtype)
    chunk = max(1, 4096 // L)
    for start in range(0, n, chunk):
        rows = X[start:start + chunk]
        c = rows.shape[0]
        U = np.empty((c * L, X.shape[1] + 1), dtype=dtype)
        U[:, :-1] = np.repeat(rows, L, axis=0)
        U[:, -1] = np.tile(cond, c)
        f, _, _, _ = net._forward_from_input(U)
        out[start:start + c] = f.reshape(c, L)
    return out


def _log_gaussian(V, mean, chol_lower):
    """Row-wise log N(v; mean, Sigma) given the lower Cholesky factor."""
    solved = solve_triangular(chol_lower, (V - mean).T, lower=True)
    maha = np.sum(solved * solved, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(chol_lower)))
    return -0.5 * (V.shape[1] * _LOG_2PI + log_det + maha)


class GaussianMixtureModel:
    """Full-covariance mixture over multiscale energy vectors.

    Fitted with plain EM; covariances get a ridge added every M-step so
    the model stays well conditioned even though neighbouring scales are
    strongly correlated. Instances are immutable once constructed.
    """

    def __init__(self, weights, means, covariances, ridge):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.means = np.asarray(means, dtype=np.float64)
        self.covariances = np.asarray(covariances, dtype=np.float64)
        self.ridge = check_positive(ridge, "ridge")
        if self.weights.ndim != 1 or self.means.ndim != 2 or self.covariances.ndim != 3:
            raise DimensionError("weights/means/covariances must be 1-D/2-D/3-D")
        k, dim = self.means.shape
        if self.weights.shape != (k,) or self.covariances.shape != (k, dim, dim):
            raise DimensionError("mixture parameter shapes are inconsistent")
        if abs(self.weights.sum() - 1.0) > 1e-12 or np.any(self.weights < 0.0):
            raise UsageError("weights must be nonnegative and sum to 1")
        self._chols = [cholesky(c, lower=True) for c in self.covariances]
        self._log_weights = np.log(np.clip(self.weights, 1e-300, None))

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    # -- scoring ----------------------------------------------------------

    def component_log_likelihoods(self, V) -> np.ndarray:
        V = as_matrix(V, "V")
        check_dim(V, self.dim, "V")
        out = np.empty((V.shape[0], self.n_components))
        for k in range(self.n_components):
            out[:, k] = self._log_weights[k] + _log_gaussian(V, self.means[k], self._chols[k])
        return out

    def log_likelihood(self, V) -> np.ndarray:
        return logsumexp(self.component_log_likelihoods(V), axis=1)

    def nll_batch(self, V) -> np.ndarray:
        """Negative log-likelihood per row; higher means more anomalous."""
        return -self.log_likelihood(V)

    def nll(self, v) -> float:
        v = as_vector(v)
        check_dim(v, self.dim, "v")
        return float(self.nll_batch(v[None, :])[0])

    # -- serialization ------------------------------------------------------

    def to_json_dict(self, extra=None) -> dict:
        doc = {
            "format": GMM_FORMAT,
            "version": GMM_VERSION,
            "L": self.dim,
            "K": self.n_components,
            "ridge": self.ridge,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }
        if extra:
            doc.update(extra)
        return doc

    @classmethod
    def from_json_dict(cls, doc) -> "GaussianMixtureModel":
        if not isinstance(doc, dict) or doc.get("format") != GMM_FORMAT:
            raise FormatError(f"not a {GMM_FORMAT} document")
        if doc.get("version") != GMM_VERSION:
            raise FormatError(f"unsupported {GMM_FORMAT} version {doc.get('version')!r}")
        try:
            gmm = cls(doc["weights"], doc["means"], doc["covariances"], doc["ridge"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed {GMM_FORMAT} document: {exc}") from exc
        if gmm.dim != doc.get("L") or gmm.n_components != doc.get("K"):
            raise FormatError("declared L/K do not match parameter shapes")
        return gmm

    def save(self, path, extra=None) -> None:
        write_text_atomic(path, json.dumps(self.to_json_dict(extra)) + "\n")

    @classmethod
    def load(cls, path) -> "GaussianMixtureModel":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON in {path}: {exc}") from exc
        return cls.from_json_dict(doc)


def load_gmm_document(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON in {path}: {exc}") from exc


def _kmeans_pp_centers(V, k, rng: Rng) -> np.ndarray:
    """Seed k centers: first uniform, then proportional to squared distance."""
    n = V.shape[0]
    centers = np.empty((k, V.shape[1]))
    first = int(rng.integers(0, n))
    centers[0] = V[first]
    d2 = np.sum((V - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(0, n))
        else:
            idx = int(rng.choice_weighted(np.cumsum(d2), 1)[0])
        centers[j] = V[idx]
        d2 = np.minimum(d2, np.sum((V - centers[j]) ** 2, axis=1))
    return centers


def _moments(V, resp, ridge):
    """Weighted means and ridge-regularized covariances from responsibilities."""
    nk = resp.sum(axis=0)
    weights = nk / V.shape[0]
    means = (resp.T @ V) / nk[:, None]
    k, dim = means.shape
    covs = np.empty((k, dim, dim))
    for j in range(k):
        diff = V - means[j]
        cov = (resp[:, j][:, None] * diff).T @ diff / nk[j]
        covs[j] = 0.5 * (cov + cov.T) + ridge * np.eye(dim)
    return weights, means, covs


def fit_em(vectors, k, max_iters=500, tol=1e-7, ridge=None, seed=0):
    """EM for a K-component full-covariance mixture.

    Initialization is k-means++ seeding followed by one hard-assignment
    moment step. The per-iteration total log-likelihood is nondecreasing
    up to numerical slack; iteration stops when its relative improvement
    drops below ``tol``. A component whose responsibility mass collapses
    is re-seeded from a random data point (logged).

    Returns (model, log_likelihood_trace).
    """
    V = as_matrix(vectors, "vectors")
    n, dim = V.shape
    k = int(k)
    if k < 1:
        raise UsageError("k must be >= 1")
    if n < k:
        raise UsageError(f"need at least k={k} vectors, got {n}")
    if not np.isfinite(V).all():
        raise UsageError("vectors must be finite")
    if max_iters < 1:
        raise UsageError("max_iters must be >= 1")
    tol = check_positive(tol, "tol")
    if ridge is None:
        # large enough to keep strongly correlated scale columns invertible,
        # small enough that the ridged M-step cannot visibly dent the
        # log-likelihood ascent (the dent scales with ridge^2)
        ridge = max(1e-7 * float(np.mean(np.var(V, axis=0))), 1e-12)
    ridge = check_positive(ridge, "ridge")
    rng = Rng(seed)

    centers = _kmeans_pp_centers(V, k, rng)
    assign = np.argmin(
        ((V[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2), axis=1)
    counts = np.bincount(assign, minlength=k)
    for j in np.flatnonzero(counts == 0):
        # steal a random point from a cluster that can spare one
        donors = np.flatnonzero(counts[assign] > 1)
        pick = int(donors[rng.integers(0, len(donors))])
        counts[assign[pick]] -= 1
        assign[pick] = j
        counts[j] = 1
    resp = np.zeros((n, k))
    resp[np.arange(n), assign] = 1.0
    weights, means, covs = _moments(V, resp, ridge)

    trace: list[float] = []
    model = GaussianMixtureModel(weights / weights.sum(), means, covs, ridge)
    for _ in range(int(max_iters)):
        joint = model.component_log_likelihoods(V)
        per_row = logsumexp(joint, axis=1)
        ll = float(per_row.sum())
        trace.append(ll)
        resp = np.exp(joint - per_row[:, None])

        mass = resp.sum(axis=0)
        for j in range(k):
            if mass[j] < 1e-12:
                logger.warning("mixture component %d collapsed; re-seeding from a data point", j)
                pick = int(rng.integers(0, n))
                resp[:, j] = 0.0
                resp[pick, j] = 1.0
                resp /= resp.sum(axis=1, keepdims=True)
        weights, means, covs = _moments(V, resp, ridge)
        model = GaussianMixtureModel(weights / weights.sum(), means, covs, ridge)

        if len(trace) >= 2:
            prev = trace[-2]
            if (ll - prev) < tol * max(abs(prev), 1e-12):
                break
    return model, trace
