"""Composite Gauss-Legendre rules used across the package.

All age integrals are piecewise smooth with a possible kink or jump at the
activation age, so every panel layout pins an edge there.
"""

from __future__ import annotations

from functools import cached_property, lru_cache

import numpy as np

GAUSS_ORDER = 16


@lru_cache(maxsize=8)
def gauss_legendre(n: int = GAUSS_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def pinned_edges(lo: float, hi: float, width: float, pin: float | None = None) -> np.ndarray:
    """Uniform-ish panel edges on [lo, hi] with an edge exactly at ``pin``."""
    if hi <= lo:
        raise ValueError("empty interval")
    cuts = [lo]
    if pin is not None and lo < pin < hi:
        cuts.append(pin)
    cuts.append(hi)
    edges = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        n = max(1, int(np.ceil((b - a) / width - 1e-9)))
        edges.append(np.linspace(a, b, n + 1)[:-1])
    edges.append(np.array([hi]))
    return np.concatenate(edges)


class PanelRule:
    """Nodes/weights of a composite rule plus lazily built within-panel sub-rules.

    ``sub_nodes[p, i, k]`` and ``sub_weights[p, i, k]`` integrate over
    ``[edges[p], nodes[p, i]]``; they give partial integrals up to every
    node without nested adaptive quadrature.
    """

    def __init__(self, edges: np.ndarray, order: int = GAUSS_ORDER):
        self.edges = np.asarray(edges, dtype=float)
        self.order = order
        x, w = gauss_legendre(order)
        left = self.edges[:-1, None]
        half = 0.5 * np.diff(self.edges)[:, None]
        self.nodes = left + half * (x + 1.0)
        self.weights = half * w

    @classmethod
    def from_edges(cls, edges: np.ndarray, order: int = GAUSS_ORDER) -> "PanelRule":
        return cls(edges, order)

    @cached_property
    def _sub_rule(self) -> tuple[np.ndarray, np.ndarray]:
        x, w = gauss_legendre(self.order)
        left = self.edges[:-1, None]
        span = 0.5 * (self.nodes - left)
        return left[:, :, None] + span[:, :, None] * (x + 1.0), span[:, :, None] * w

    @property
    def sub_nodes(self) -> np.ndarray:
        return self._sub_rule[0]

    @property
    def sub_weights(self) -> np.ndarray:
        return self._sub_rule[1]

    @property
    def n_panels(self) -> int:
        return len(self.edges) - 1

    def integrate(self, values: np.ndarray) -> complex | float:
        return np.sum(values * self.weights)

    def cumulative(self, f) -> np.ndarray:
        """``int_{edges[0]}^{node} f`` at every node, for a vectorized ``f``."""
        panel = np.sum(f(self.nodes) * self.weights, axis=1)
        start = np.concatenate(([0.0], np.cumsum(panel)[:-1]))
        partial = np.sum(f(self.sub_nodes) * self.sub_weights, axis=2)
        return start[:, None] + partial

    def cumulative_edges(self, f) -> np.ndarray:
        panel = np.sum(f(self.nodes) * self.weights, axis=1)
        return np.concatenate(([0.0], np.cumsum(panel)))


def gauss_between(f, a: np.ndarray, b: np.ndarray, pin: float | None = None,
                  order: int = 8) -> np.ndarray:
    """Vectorized ``int_a^b f`` for arrays of interval endpoints.

    Intervals containing ``pin`` are split there, so a jump of ``f`` at the
    pin costs no accuracy.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x, w = gauss_legendre(order)

    def rule(lo, hi):
        half = 0.5 * (hi - lo)
        pts = lo[..., None] + half[..., None] * (x + 1.0)
        return np.sum(f(pts) * w, axis=-1) * half

    if pin is None:
        return rule(a, b)
    left_hi = np.clip(pin, a, b)
    return rule(a, left_hi) + rule(left_hi, b)


def adaptive_gauss(f, lo: float, hi: float, rtol: float = 1e-10,
                   max_depth: int = 30, order: int = GAUSS_ORDER) -> float:
    """Adaptive composite Gauss-Legendre by panel bisection."""
    x, w = gauss_legendre(order)

    def panel(a, b):
        half = 0.5 * (b - a)
        return half * float(np.sum(w * f(a + half * (x + 1.0))))

    total = 0.0
    stack = [(lo, hi, panel(lo, hi), 0)]
    while stack:
        a, b, whole, depth = stack.pop()
        m = 0.5 * (a + b)
        left, right = panel(a, m), panel(m, b)
        refined = left + right
        if depth >= max_depth or abs(refined - whole) <= rtol * max(abs(refined), 1e-300):
            total += refined
        else:
            stack.append((a, m, left, depth + 1))
            stack.append((m, b, right, depth + 1))
    return total
