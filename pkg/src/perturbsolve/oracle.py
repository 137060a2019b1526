"""Brute-force references used to check the solver.

Nothing here imports the covering or solver modules.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graded_space import Gauge
from .operators import ImageEllipsoid, LinearOperator


@dataclass
class LeastSquares:
    z_star: np.ndarray
    residual: float


def direct_least_squares(h: LinearOperator, y) -> LeastSquares:
    y = np.asarray(y, dtype=float)
    z, *_ = np.linalg.lstsq(h.matrix, y, rcond=None)
    res = np.linalg.norm(h.matrix @ z - y) / max(np.linalg.norm(y), 1.0)
    return LeastSquares(z, float(res))


def _target_gauge(target, pts):
    if isinstance(target, Gauge):
        return target(pts)
    return np.array([target.gauge(p) for p in pts])


def monte_carlo_sup_gauge(K: ImageEllipsoid, target, trials: int = 10000, seed: int = 0) -> float:
    """Largest target gauge over seeded points ``M u`` with ``||u|| = 1``."""
    if trials < 1:
        raise ValueError("trials must be positive")
    m = K.generator
    if m.size == 0 or not np.any(m):
        return 0.0
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((trials, m.shape[1]))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    pts = u @ m.T
    if isinstance(target, ImageEllipsoid) and target.full_rank:
        vals = np.linalg.norm(pts @ target.whitener.T, axis=1)
    else:
        vals = _target_gauge(target, pts)
    return float(np.max(vals))


@dataclass
class NeumannSeries:
    partial_sums: list[np.ndarray]
    diverging: bool


def neumann_reference(f: LinearOperator, y0, terms: int) -> NeumannSeries:
    """Partial sums of ``sum_i (-f)^i y0``.

    ``diverging`` is set when the term norm fails to shrink on two
    consecutive steps.
    """
    if f.shape[0] != f.shape[1]:
        raise ValueError("Neumann series needs a square operator")
    term = np.asarray(y0, dtype=float).copy()
    total = np.zeros_like(term)
    sums, norms = [], []
    for _ in range(terms):
        total = total + term
        sums.append(total.copy())
        norms.append(np.linalg.norm(term))
        term = -(f.matrix @ term)
    growth = [a > 0 and b >= a * (1 - 1e-12) for a, b in zip(norms, norms[1:])]
    diverging = any(x and y for x, y in zip(growth, growth[1:]))
    return NeumannSeries(sums, diverging)
