"""Deterministic 1D quadrature rules used by every kernel-discretization module.

Two rule families cover all integrals in the lab: affinely mapped
Gauss-Legendre rules on finite intervals, and their push-forward to
[0, inf) through the rational substitution r = scale * t / (1 - t).
Rules are cached by their defining parameters so repeated sweeps reuse
identical node sets.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import AccuracyError

_CACHE: dict[tuple, "QuadratureRule"] = {}
_CACHE_LOCK = threading.Lock()


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and positive weights for a fixed integration domain.

    ``spec`` records how the rule was built so that ``refined()`` can
    produce the doubled-count companion used for self-convergence checks.
    """

    nodes: np.ndarray
    weights: np.ndarray
    domain: tuple[float, float]
    spec: tuple

    def integrate(self, f) -> float:
        """Plain weighted sum of ``f`` over the nodes."""
        return float(np.dot(self.weights, f(self.nodes)))

    def refined(self) -> "QuadratureRule":
        """Same rule family with twice the node count."""
        kind = self.spec[0]
        if kind == "gauss_legendre":
            _, n, a, b = self.spec
            return gauss_legendre(2 * n, a, b)
        if kind == "composite":
            _, edges, n_per_panel = self.spec
            return composite_gauss_legendre(np.asarray(edges), 2 * n_per_panel)
        _, n, scale = self.spec
        return semi_infinite_grid(2 * n, scale)

    def integrate_checked(self, f, rtol: float = 1e-9, atol: float = 1e-12) -> float:
        """Integrate with a doubling self-convergence estimate.

        Raises AccuracyError when the doubled rule moves the result by
        more than the tolerance; this is the guard that rejects
        non-integrable probes such as a constant on [0, inf).
        """
        coarse = self.integrate(f)
        fine = self.refined().integrate(f)
        if abs(fine - coarse) > rtol * max(abs(fine), abs(coarse)) + atol:
            raise AccuracyError(
                f"quadrature did not converge: n={len(self.nodes)} gives {coarse!r}, "
                f"doubled rule gives {fine!r}"
            )
        return fine


def gauss_legendre(n: int, a: float, b: float) -> QuadratureRule:
    """Gauss-Legendre rule with ``n`` points mapped to [a, b]."""
    if n < 1:
        raise ValueError("node count must be >= 1")
    if not a < b:
        raise ValueError(f"empty interval [{a}, {b}]")
    key = ("gauss_legendre", n, float(a), float(b))
    with _CACHE_LOCK:
        hit = _CACHE.get(key)
    if hit is not None:
        return hit
    t, w = leggauss(n)
    half = 0.5 * (b - a)
    rule = QuadratureRule(
        nodes=a + half * (t + 1.0),
        weights=half * w,
        domain=(float(a), float(b)),
        spec=key,
    )
    with _CACHE_LOCK:
        _CACHE[key] = rule
    return rule


def semi_infinite_grid(n: int, scale: float = 1.0) -> QuadratureRule:
    """Rule on [0, inf) via r = scale*t/(1-t), Jacobian folded into the weights."""
    if n < 1:
        raise ValueError("node count must be >= 1")
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    key = ("semi_infinite", n, float(scale))
    with _CACHE_LOCK:
        hit = _CACHE.get(key)
    if hit is not None:
        return hit
    base = gauss_legendre(n, 0.0, 1.0)
    t = base.nodes
    rule = QuadratureRule(
        nodes=scale * t / (1.0 - t),
        weights=base.weights * scale / (1.0 - t) ** 2,
        domain=(0.0, np.inf),
        spec=key,
    )
    with _CACHE_LOCK:
        _CACHE[key] = rule
    return rule


@lru_cache(maxsize=16)
def panel_partial_integrals(q: int) -> np.ndarray:
    """tau[i, j] = integral of the j-th Lagrange basis from -1 to node i.

    Computed through the Legendre expansion of the basis polynomials on the
    q-point Gauss-Legendre reference panel; used for product integration of
    semi-separable kernels across the panel containing the kink.
    """
    t, w = leggauss(q)
    vander = np.polynomial.legendre.legvander(t, q - 1)  # P_m(t_k)
    coeff = ((2.0 * np.arange(q) + 1.0) / 2.0)[:, None] * (w[None, :] * vander.T)
    anti = np.zeros((q, q))  # anti[i, m] = int_{-1}^{t_i} P_m
    anti[:, 0] = t + 1.0
    for m in range(1, q):
        e_hi = np.zeros(m + 2)
        e_hi[m + 1] = 1.0
        e_lo = np.zeros(m)
        e_lo[m - 1] = 1.0
        anti[:, m] = (np.polynomial.legendre.legval(t, e_hi)
                      - np.polynomial.legendre.legval(t, e_lo)) / (2.0 * m + 1.0)
    return anti @ coeff


def composite_gauss_legendre(edges, n_per_panel: int) -> QuadratureRule:
    """Panel-wise Gauss-Legendre rule over consecutive ``edges``.

    Used where integrands carry kinks or oscillations at known locations
    (square-well edges, the sqrt(p) transition of the channel multiplier).
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be strictly increasing with at least two entries")
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        panel = gauss_legendre(n_per_panel, a, b)
        nodes.append(panel.nodes)
        weights.append(panel.weights)
    return QuadratureRule(
        nodes=np.concatenate(nodes),
        weights=np.concatenate(weights),
        domain=(float(edges[0]), float(edges[-1])),
        spec=("composite", tuple(edges.tolist()), n_per_panel),
    )
