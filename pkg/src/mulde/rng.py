"""Seeded random number generation with a fixed consumption order.

Built on numpy's counter-based Philox bit generator so that streams are
platform independent. Gaussian variates are produced by Box-Muller from
the uniform stream (pairs consumed as cos-half then sin-half) instead of
numpy's ziggurat, which keeps the draw order an explicit contract of
this module.
"""

from __future__ import annotations

import numpy as np

_TWO_PI = 2.0 * np.pi


class Rng:
    """Deterministic generator; one instance per independent stream."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def uniform(self, size=None) -> np.ndarray | float:
        """Uniform float64 draws in [0, 1)."""
        return self._gen.random(size)

    def normal(self, size) -> np.ndarray:
        """Standard normal draws via Box-Muller.

        For n requested values, ceil(n/2) uniform pairs (u1, u2) are
        consumed; the output is [r*cos(2*pi*u2), r*sin(2*pi*u2)] with
        r = sqrt(-2*log(1-u1)), truncated to n and reshaped.
        """
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        if n == 0:
            return np.empty(shape, dtype=np.float64)
        m = (n + 1) // 2
        u1 = self._gen.random(m)
        u2 = self._gen.random(m)
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.concatenate([r * np.cos(_TWO_PI * u2), r * np.sin(_TWO_PI * u2)])
        return z[:n].reshape(shape)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high=high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_weighted(self, cum_weights: np.ndarray, size: int) -> np.ndarray:
        """Indices drawn with probability proportional to the weight steps.

        ``cum_weights`` is the cumulative sum of nonnegative weights with
        cum_weights[-1] == total mass; consumes ``size`` uniforms.
        """
        u = self._gen.random(size) * cum_weights[-1]
        return np.searchsorted(cum_weights, u, side="right").clip(0, len(cum_weights) - 1)
