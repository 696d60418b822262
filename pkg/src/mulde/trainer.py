"""Training loop: noise sampling, perturbation, Adam, convergence bookkeeping.

One epoch shuffles the training rows, walks batches of ``batch_size``
(the last short batch is kept), samples one noise scale per batch element
from the log-uniform distribution, perturbs, and applies a bias-corrected
Adam step on the exact loss gradients. Everything is driven by a single
seeded stream with a fixed consumption order per epoch: permutation,
then per batch the noise scales followed by the Gaussian perturbations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .energy_net import EnergyNet, score_matching_loss
from .errors import FormatError, NumericError, UsageError
from .rng import Rng
from .validation import as_matrix, check_positive

CONFIG_KEYS = ("learning_rate", "adam_beta1", "adam_beta2", "adam_epsilon",
               "batch_size", "beta_reg", "sigma_low", "sigma_high", "L",
               "max_epochs", "hidden_widths", "seed")


@dataclass
class TrainConfig:
    """Hyperparameters for one training run.

    ``learning_rate`` defaults to the object-centric value; use
    :meth:`frame_centric` for the whole-frame preset.
    """

    learning_rate: float = 5e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    adam_epsilon: float = 1e-8
    batch_size: int = 2048
    beta_reg: float = 0.1
    sigma_low: float = 1e-3
    sigma_high: float = 1.0
    n_scales: int = 16
    max_epochs: int = 100
    hidden_widths: tuple = (4096, 4096)
    seed: int = 0

    def __post_init__(self):
        check_positive(self.learning_rate, "learning_rate")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise UsageError("adam decay rates must lie in [0, 1)")
        check_positive(self.adam_epsilon, "adam_epsilon")
        if int(self.batch_size) < 1:
            raise UsageError("batch_size must be >= 1")
        if self.beta_reg < 0.0:
            raise UsageError("beta_reg must be nonnegative")
        check_positive(self.sigma_low, "sigma_low")
        check_positive(self.sigma_high, "sigma_high")
        if self.sigma_low > self.sigma_high:
            raise UsageError("sigma_low must not exceed sigma_high")
        if int(self.n_scales) < 1:
            raise UsageError("L must be >= 1")
        if int(self.max_epochs) < 1:
            raise UsageError("max_epochs must be >= 1")
        self.hidden_widths = tuple(int(w) for w in self.hidden_widths)

    @classmethod
    def object_centric(cls, **kwargs) -> "TrainConfig":
        kwargs.setdefault("learning_rate", 5e-4)
        return cls(**kwargs)

    @classmethod
    def frame_centric(cls, **kwargs) -> "TrainConfig":
        kwargs.setdefault("learning_rate", 1e-4)
        return cls(**kwargs)

    def to_json_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_epsilon": self.adam_epsilon,
            "batch_size": int(self.batch_size),
            "beta_reg": self.beta_reg,
            "sigma_low": self.sigma_low,
            "sigma_high": self.sigma_high,
            "L": int(self.n_scales),
            "max_epochs": int(self.max_epochs),
            "hidden_widths": list(self.hidden_widths),
            "seed": int(self.seed),
        }

    @classmethod
    def from_json_dict(cls, doc) -> "TrainConfig":
        if not isinstance(doc, dict):
            raise FormatError("config must be a JSON object")
        unknown = sorted(set(doc) - set(CONFIG_KEYS))
        if unknown:
            raise FormatError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = dict(doc)
        if "L" in kwargs:
            kwargs["n_scales"] = kwargs.pop("L")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise FormatError(f"bad config value: {exc}") from exc

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON in {path}: {exc}") from exc
        return cls.from_json_dict(doc)

    def with_seed(self, seed) -> "TrainConfig":
        return replace(self, seed=int(seed))


@dataclass
class AdamState:
    """First/second moment accumulators, one array per parameter."""

    first_moments: list = field(default_factory=list)
    second_moments: list = field(default_factory=list)
    step_count: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls([np.zeros_like(p, dtype=np.float64) for p in params],
                   [np.zeros_like(p, dtype=np.float64) for p in params], 0)


def sample_log_uniform(rng: Rng, sigma_low, sigma_high, size=None):
    """sigma = exp(U) with U uniform on [log sigma_low, log sigma_high]."""
    sigma_low = check_positive(sigma_low, "sigma_low")
    sigma_high = check_positive(sigma_high, "sigma_high")
    if sigma_low > sigma_high:
        raise UsageError("sigma_low must not exceed sigma_high")
    lo, hi = np.log(sigma_low), np.log(sigma_high)
    u = rng.uniform(size)
    sigma = np.exp(lo + (hi - lo) * u)
    return np.clip(sigma, sigma_low, sigma_high)


def perturb(x, sigma, rng: Rng):
    """x + sigma * z with z iid standard normal, matching x's shape."""
    x = np.asarray(x, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0.0):
        raise UsageError("sigma must be positive")
    z = rng.normal(x.shape)
    if sigma.ndim == 1 and x.ndim == 2:
        return x + sigma[:, None] * z
    return x + sigma * z


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    if len(params) != len(grads) or len(params) != len(state.first_moments):
        raise UsageError("params, grads and state must have matching lengths")
    b1, b2 = config.adam_beta1, config.adam_beta2
    t = state.step_count + 1
    lr, eps = config.learning_rate, config.adam_epsilon
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moments, state.second_moments):
        if p.shape != g.shape:
            raise UsageError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t)


def train(features, net_init: EnergyNet, config: TrainConfig, *,
          early_stop=False, average_tail=0, on_epoch_end=None):
    """Fit the energy network on standardized normal-only features.

    Returns (net, history) where history holds the per-epoch mean training
    loss. Deterministic given (seed, config, data order). With
    ``early_stop`` the run ends once the mean epoch loss fails to improve
    on the best seen by at least 0.1% for 10 consecutive epochs.
    ``average_tail=N`` returns the parameter average of the last N epochs
    instead of the final iterate, damping the stochastic-gradient
    oscillation around the optimum (the optimizer itself is unchanged).
    ``on_epoch_end(epoch, net, loss)`` is invoked after each epoch when
    given.
    """
    X = as_matrix(features, "features")
    n = X.shape[0]
    if n == 0:
        raise UsageError("training set must be nonempty")
    if X.shape[1] != net_init.feature_dim:
        raise UsageError(f"features have dimension {X.shape[1]}, net expects {net_init.feature_dim}")
    if not np.isfinite(X).all():
        raise NumericError("training features contain non-finite values")

    rng = Rng(config.seed)
    params = [p.astype(np.float64, copy=True) for p in net_init.parameters()]
    state = AdamState.for_params(params)
    history: list[float] = []
    batch_size = int(config.batch_size)
    best = np.inf
    stall = 0
    average_tail = int(average_tail)
    tail_sum = None
    tail_count = 0

    for epoch in range(int(config.max_epochs)):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb = X[idx]
            sig = np.atleast_1d(sample_log_uniform(rng, config.sigma_low,
                                                   config.sigma_high, size=len(idx)))
            xt = perturb(xb, sig, rng)
            net = net_init.with_parameters(params)
            try:
                loss, grads = score_matching_loss(net, xb, xt, sig, config.beta_reg)
            except NumericError as exc:
                raise NumericError(f"training diverged at epoch {epoch + 1}: {exc}",
                                   layer=exc.layer, last_net=net, history=history) from exc
            params, state = adam_step(params, grads, state, config)
            total += loss * len(idx)
            seen += len(idx)
        mean_loss = total / seen
        if not np.isfinite(mean_loss):
            raise NumericError(f"non-finite epoch loss at epoch {epoch + 1}",
                               last_net=net_init.with_parameters(params), history=history)
        history.append(mean_loss)
        if average_tail > 0 and epoch >= int(config.max_epochs) - average_tail:
            if tail_sum is None:
                tail_sum = [p.copy() for p in params]
            else:
                for acc, p in zip(tail_sum, params):
                    acc += p
            tail_count += 1
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, net_init.with_parameters(params), mean_loss)
        if early_stop:
            improved = (best - mean_loss) > 0.001 * abs(best)
            stall = 0 if improved else stall + 1
            if stall >= 10:
                break
        best = min(best, mean_loss)

    if tail_count > 0:
        params = [acc / tail_count for acc in tail_sum]
    return net_init.with_parameters(params), history
