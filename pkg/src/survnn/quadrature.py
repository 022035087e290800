"""Gauss-Legendre rules on [0,1] and composite-node layouts for hazard integrals."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError

__all__ = ["QuadratureRule", "composite_nodes"]


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre abscissae/weights transplanted to [0,1].

    Weights sum to one; the rule integrates polynomials of degree <= 2Q-1
    exactly.
    """

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    @classmethod
    def gauss_legendre(cls, order: int) -> "QuadratureRule":
        if order < 2:
            raise ConfigError(f"quadrature order must be >= 2, got {order}")
        x, w = np.polynomial.legendre.leggauss(order)
        return cls(nodes=(x + 1.0) / 2.0, weights=w / 2.0, order=order)

    def integrate(self, f, a: float = 0.0, b: float = 1.0) -> float:
        """Single-panel integral of f over [a, b]."""
        t = a + (b - a) * self.nodes
        return float((b - a) * np.dot(self.weights, f(t)))


@lru_cache(maxsize=32)
def _cached_rule(order: int) -> QuadratureRule:
    return QuadratureRule.gauss_legendre(order)


def get_rule(order: int) -> QuadratureRule:
    return _cached_rule(int(order))


def composite_nodes(upper, subintervals: int, order: int):
    """Node times and weights for integrating over [0, upper] per row.

    upper may be a scalar or an (m,) array.  Returns (times, weights) of shape
    (m, subintervals*order); row i integrates [0, upper[i]] as
    sum_j weights[i, j] * f(times[i, j]).
    """
    rule = get_rule(order)
    u = np.atleast_1d(np.asarray(upper, dtype=float))
    K = int(subintervals)
    if K < 1:
        raise ConfigError("subinterval count must be >= 1")
    # offsets of each node inside [0,1]: subinterval k covers [k/K, (k+1)/K]
    offs = ((np.arange(K)[:, None] + rule.nodes[None, :]) / K).ravel()
    wts = np.tile(rule.weights / K, K)
    times = u[:, None] * offs[None, :]
    weights = u[:, None] * wts[None, :]
    return times, weights
