"""Scalar energy network with analytic input gradients and double backprop.

The network is a plain dense MLP mapping a feature vector plus one noise
conditioning slot to a scalar energy (negative log-density up to a
constant). Training regresses the *input gradient* of the network against
denoising targets, so parameter gradients of the loss require second
derivatives of the activation; everything is hand-derived for this fixed
MLP family rather than routed through an autodiff engine.
"""

from __future__ import annotations

import json

import numpy as np
from scipy.special import erf

from .errors import DimensionError, FormatError, NumericError, UsageError
from .ioutil import write_text_atomic
from .rng import Rng
from .validation import as_matrix, as_vector, check_dim, check_positive

_SQRT1_2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

NET_FORMAT = "mulde-net"
NET_VERSION = 1


def gelu_derivatives(u):
    """Exact-erf GELU u*Phi(u) with its first and second derivatives.

    Returns (value, first, second); accepts scalars or arrays. The first
    two derivatives are continuous everywhere, which is what makes the
    gradient-regression loss itself differentiable in the parameters.
    """
    u = np.asarray(u)
    cdf = 0.5 * (1.0 + erf(u * _SQRT1_2))
    pdf = np.exp(-0.5 * u * u) * _INV_SQRT_2PI
    value = u * cdf
    first = cdf + u * pdf
    second = (2.0 - u * u) * pdf
    if value.ndim == 0:
        return float(value), float(first), float(second)
    return value, first, second


def _gelu_value(u):
    return u * (0.5 * (1.0 + erf(u * _SQRT1_2)))


class EnergyNet:
    """Dense MLP f(x, sigma) -> scalar with log-affine sigma conditioning.

    The conditioning value c(sigma) = affinely rescaled log(sigma) (the
    training range maps onto [-1, 1]) occupies one extra input slot after
    the feature components. Hidden layers use exact-erf GELU; the output
    layer is linear. Instances are immutable during evaluation and safe
    to share across workers.
    """

    def __init__(self, weights, biases, sigma_low, sigma_high):
        if len(weights) != len(biases):
            raise UsageError("weights and biases must have the same number of layers")
        if len(weights) < 1:
            raise UsageError("network needs at least one layer")
        self.weights = [np.ascontiguousarray(w) for w in weights]
        self.biases = [np.ascontiguousarray(b) for b in biases]
        for idx, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise DimensionError(f"layer {idx}: weight {w.shape} and bias {b.shape} do not chain")
            if idx > 0 and w.shape[1] != self.weights[idx - 1].shape[0]:
                raise DimensionError(f"layer {idx}: input width {w.shape[1]} does not match previous layer")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericError(f"layer {idx}: non-finite parameter", layer=idx)
        if self.weights[-1].shape[0] != 1:
            raise DimensionError("final layer must map to a single scalar output")
        self.sigma_low = check_positive(sigma_low, "sigma_low")
        self.sigma_high = check_positive(sigma_high, "sigma_high")
        if self.sigma_low > self.sigma_high:
            raise UsageError("sigma_low must not exceed sigma_high")

    # -- construction ---------------------------------------------------

    @classmethod
    def initialize(cls, feature_dim, hidden_widths=(4096, 4096), sigma_low=1e-3,
                   sigma_high=1.0, seed=0):
        """Fresh network with scaled-uniform weights and zero biases.

        Per-layer weights are uniform with variance 2/(fan_in+fan_out).
        """
        feature_dim = int(feature_dim)
        if feature_dim < 1:
            raise UsageError("feature_dim must be >= 1")
        widths = [feature_dim + 1] + [int(w) for w in hidden_widths] + [1]
        if any(w < 1 for w in widths):
            raise UsageError("hidden widths must be positive")
        rng = Rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = (rng.uniform((fan_out, fan_in)) * 2.0 - 1.0) * bound
            weights.append(w)
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, sigma_low, sigma_high)

    # -- basic properties -----------------------------------------------

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def feature_dim(self) -> int:
        return self.input_dim - 1

    @property
    def hidden_widths(self) -> list[int]:
        return [w.shape[0] for w in self.weights[:-1]]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list: all weights, then all biases."""
        return list(self.weights) + list(self.biases)

    def with_parameters(self, params) -> "EnergyNet":
        n = self.n_layers
        return EnergyNet(params[:n], params[n:], self.sigma_low, self.sigma_high)

    def astype(self, dtype) -> "EnergyNet":
        return EnergyNet([w.astype(dtype) for w in self.weights],
                         [b.astype(dtype) for b in self.biases],
                         self.sigma_low, self.sigma_high)

    # -- conditioning ---------------------------------------------------

    def conditioning_value(self, sigma):
        """Map sigma to the conditioning input: log sigma rescaled so the
        training range [sigma_low, sigma_high] covers [-1, 1]."""
        sigma = np.asarray(sigma, dtype=np.float64)
        if np.any(sigma <= 0.0) or not np.all(np.isfinite(sigma)):
            raise UsageError("sigma must be positive and finite")
        lo, hi = np.log(self.sigma_low), np.log(self.sigma_high)
        if hi == lo:
            return np.zeros_like(sigma)
        return 2.0 * (np.log(sigma) - lo) / (hi - lo) - 1.0

    def _conditioned(self, X, sigma):
        X = np.asarray(X)
        c = np.broadcast_to(self.conditioning_value(sigma), X.shape[:-1])
        return np.concatenate([X, c[..., None].astype(X.dtype)], axis=-1)

    # -- evaluation -----------------------------------------------------

    def _forward_from_input(self, U, need_first=False, need_second=False,
                            check_finite=False):
        """Shared forward pass over conditioned inputs U (B, input_dim).

        Returns (f, H, P1, P2): per-row scalar energies, post-activation
        values per hidden layer (H[0] is U itself), and first/second
        activation derivatives at each hidden pre-activation. Derivative
        arrays are only populated when requested; plain scoring skips
        their transcendentals entirely.
        """
        H = [U]
        P1, P2 = [], []
        h = U
        last = self.n_layers - 1
        need_first = need_first or need_second
        for idx, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ w.T + b
            if check_finite and not np.isfinite(a).all():
                raise NumericError("non-finite pre-activation", layer=idx)
            if idx == last:
                return a[:, 0], H, P1, P2
            cdf = 0.5 * (1.0 + erf(a * np.asarray(_SQRT1_2, dtype=a.dtype)))
            h = a * cdf
            if need_first:
                pdf = np.exp(-0.5 * a * a) * np.asarray(_INV_SQRT_2PI, dtype=a.dtype)
                P1.append(cdf + a * pdf)
                P2.append((2.0 - a * a) * pdf if need_second else None)
            H.append(h)
        raise AssertionError("unreachable")

    def forward_batch(self, X, sigma) -> np.ndarray:
        """Energies for rows of X at noise scale(s) sigma."""
        X = np.asarray(X)
        if X.ndim != 2:
            raise DimensionError(f"X must be 2-D, got shape {X.shape}")
        check_dim(X, self.feature_dim, "X")
        f, _, _, _ = self._forward_from_input(self._conditioned(X, sigma))
        return f

    def forward(self, x, sigma) -> float:
        """Scalar energy f(x, sigma) for a single feature vector."""
        x = as_vector(x)
        check_dim(x, self.feature_dim, "x")
        return float(self.forward_batch(x[None, :], sigma)[0])

    def _input_gradient_full(self, U):
        """Gradient of f w.r.t. the conditioned input, batched."""
        _, H, P1, _ = self._forward_from_input(U, need_first=True)
        d = np.ones((U.shape[0], 1), dtype=U.dtype)
        for l in range(self.n_layers - 1, 0, -1):
            d = (d @ self.weights[l]) * P1[l - 1]
        return d @ self.weights[0]

    def input_gradient_batch(self, X, sigma) -> np.ndarray:
        """Feature-space gradients d f / d x, excluding the conditioning slot."""
        X = np.asarray(X)
        if X.ndim != 2:
            raise DimensionError(f"X must be 2-D, got shape {X.shape}")
        check_dim(X, self.feature_dim, "X")
        g = self._input_gradient_full(self._conditioned(X, sigma))
        return g[:, : self.feature_dim]

    def input_gradient(self, x, sigma) -> np.ndarray:
        x = as_vector(x)
        check_dim(x, self.feature_dim, "x")
        return self.input_gradient_batch(x[None, :], sigma)[0]

    # -- serialization --------------------------------------------------

    def to_json_dict(self, extra=None) -> dict:
        doc = {
            "format": NET_FORMAT,
            "version": NET_VERSION,
            "input_dim": self.input_dim,
            "hidden_widths": self.hidden_widths,
            "conditioning": {
                "kind": "log-affine",
                "sigma_low": self.sigma_low,
                "sigma_high": self.sigma_high,
            },
            "layers": [
                {"w": w.astype(np.float64).tolist(), "b": b.astype(np.float64).tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
        }
        if extra:
            doc.update(extra)
        return doc

    @classmethod
    def from_json_dict(cls, doc) -> "EnergyNet":
        if not isinstance(doc, dict) or doc.get("format") != NET_FORMAT:
            raise FormatError(f"not a {NET_FORMAT} document")
        if doc.get("version") != NET_VERSION:
            raise FormatError(f"unsupported {NET_FORMAT} version {doc.get('version')!r}")
        cond = doc.get("conditioning", {})
        if cond.get("kind") != "log-affine":
            raise FormatError(f"unknown conditioning kind {cond.get('kind')!r}")
        try:
            weights = [np.asarray(layer["w"], dtype=np.float64) for layer in doc["layers"]]
            biases = [np.asarray(layer["b"], dtype=np.float64) for layer in doc["layers"]]
            net = cls(weights, biases, cond["sigma_low"], cond["sigma_high"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed {NET_FORMAT} document: {exc}") from exc
        if net.input_dim != doc.get("input_dim"):
            raise FormatError("declared input_dim does not match layer shapes")
        return net

    def save(self, path, extra=None) -> None:
        write_text_atomic(path, json.dumps(self.to_json_dict(extra)) + "\n")

    @classmethod
    def load(cls, path) -> "EnergyNet":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON in {path}: {exc}") from exc
        return cls.from_json_dict(doc)


def load_net_document(path) -> dict:
    """Raw model JSON including any embedded provenance fields."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON in {path}: {exc}") from exc


def score_matching_loss(net, x, x_tilde, sigma, beta, lambda_form="sigma2"):
    """Loss and exact parameter gradients for one batch.

    Per element: lambda(sigma) * ||grad_x f(x_tilde, sigma) - (x_tilde - x)/sigma^2||^2
    + beta * f(x, sigma)^2, averaged over the batch. Gradients are exact
    derivatives of this average w.r.t. every weight and bias, obtained by
    backpropagating through the analytic input gradient (second activation
    derivatives) plus a standard pass for the clean-input penalty.

    Returns (loss, grads) with grads ordered like ``net.parameters()``.
    Accumulation is float64 regardless of parameter storage dtype.
    """
    if lambda_form != "sigma2":
        raise UsageError(f"unknown lambda_form {lambda_form!r}")
    x = as_matrix(x, "x")
    x_tilde = as_matrix(x_tilde, "x_tilde")
    if x.shape[0] == 0:
        raise UsageError("batch must be nonempty")
    if x.shape != x_tilde.shape:
        raise DimensionError(f"x {x.shape} and x_tilde {x_tilde.shape} must match")
    check_dim(x, net.feature_dim, "x")
    if beta < 0.0 or not np.isfinite(beta):
        raise UsageError("beta must be nonnegative and finite")
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (x.shape[0],))
    if np.any(sigma <= 0.0):
        raise UsageError("sigma must be positive")

    B, d = x.shape
    n_layers = net.n_layers
    W = [w.astype(np.float64, copy=False) for w in net.weights]
    gW = [np.zeros_like(w) for w in W]
    gb = [np.zeros_like(b, dtype=np.float64) for b in net.biases]

    sig2 = sigma * sigma

    # Gradient-regression term, evaluated at the noisy inputs.
    U = net._conditioned(x_tilde.astype(np.float64), sigma)
    _, H, P1, P2 = net._forward_from_input(U, need_second=True, check_finite=True)

    D = [None] * (n_layers + 1)          # d f / d a_l per row
    C = [None] * n_layers                # upstream of the activation gate
    D[n_layers] = np.ones((B, 1))
    for l in range(n_layers - 1, 0, -1):
        C[l] = D[l + 1] @ W[l]
        D[l] = P1[l - 1] * C[l]
    G = D[1] @ W[0]                      # d f / d input, incl. conditioning slot

    target = (x_tilde - x) / sig2[:, None]
    resid = G[:, :d] - target
    score_terms = sig2 * np.einsum("ij,ij->i", resid, resid)

    # Adjoint of the scalar sum_i w_i * (r_i . g_i) pushed back through the
    # gradient computation itself (reverse over reverse).
    Rbar = np.zeros_like(U)
    Rbar[:, :d] = (2.0 * sig2)[:, None] * resid

    Abar = [None] * n_layers             # adjoints of pre-activations
    gW[0] += D[1].T @ Rbar
    Dbar = Rbar @ W[0].T
    for l in range(1, n_layers):
        Cbar = P1[l - 1] * Dbar
        Abar[l - 1] = P2[l - 1] * C[l] * Dbar
        gW[l] += D[l + 1].T @ Cbar
        Dbar = Cbar @ W[l].T
    # Dbar now sits at the constant seed d f / d a_top; nothing flows past it.

    down = None
    for l in range(n_layers - 2, -1, -1):
        a_bar = Abar[l] if down is None else Abar[l] + P1[l] * (down @ W[l + 1])
        gW[l] += a_bar.T @ H[l]
        gb[l] += a_bar.sum(axis=0)
        down = a_bar

    # Clean-input energy penalty.
    reg_terms = np.zeros(B)
    if beta > 0.0:
        Uc = net._conditioned(x.astype(np.float64), sigma)
        f_clean, Hc, P1c, _ = net._forward_from_input(Uc, need_first=True, check_finite=True)
        reg_terms = beta * f_clean * f_clean
        a_bar = (2.0 * beta * f_clean)[:, None]
        for l in range(n_layers - 1, -1, -1):
            gW[l] += a_bar.T @ Hc[l]
            gb[l] += a_bar.sum(axis=0)
            if l > 0:
                a_bar = P1c[l - 1] * (a_bar @ W[l])

    loss = float(np.mean(score_terms + reg_terms))
    if not np.isfinite(loss):
        raise NumericError("non-finite loss", layer=None)
    grads = [g / B for g in gW] + [g / B for g in gb]
    return loss, grads
