"""Ellipsoidal gauges and finite graded spaces.

A gauge is the Minkowski functional ``x -> sqrt(x^T Q x)`` of an ellipsoid
centred at the origin.  A graded space is a coordinate space carrying an
increasing sequence of such gauges, playing the role of a fundamental system
of neighbourhoods ``W_1 > W_2 > ...`` (unit balls shrink as the gauges grow).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg

from .errors import DimensionError, NestingError

NESTING_TOL = 1e-10
DEFAULT_MARGIN = 1e-6
_SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class Gauge:
    """Gauge of the ellipsoid ``{x : x^T Q x <= 1}``; Q must be SPD."""

    quad: np.ndarray

    def __post_init__(self):
        q = np.array(self.quad, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise DimensionError(f"quad must be square, got shape {q.shape}")
        if q.shape[0] == 0:
            raise DimensionError("gauge dimension must be positive")
        if not np.all(np.isfinite(q)):
            raise ValueError("quad has non-finite entries")
        scale = np.linalg.norm(q)
        if np.linalg.norm(q - q.T) > _SYMMETRY_RTOL * scale:
            raise ValueError("quad is not symmetric")
        q = 0.5 * (q + q.T)
        try:
            chol = np.linalg.cholesky(q)
        except np.linalg.LinAlgError:
            raise ValueError("quad is not positive definite") from None
        q.setflags(write=False)
        chol.setflags(write=False)
        object.__setattr__(self, "quad", q)
        object.__setattr__(self, "_chol", chol)

    @classmethod
    def euclidean(cls, dim: int) -> "Gauge":
        return cls(np.eye(dim))

    @classmethod
    def diagonal(cls, weights) -> "Gauge":
        return cls(np.diag(np.asarray(weights, dtype=float)))

    @classmethod
    def from_cholesky(cls, lower) -> "Gauge":
        lower = np.tril(np.asarray(lower, dtype=float))
        return cls(lower @ lower.T)

    @property
    def dim(self) -> int:
        return self.quad.shape[0]

    @property
    def chol(self) -> np.ndarray:
        """Lower factor L with ``Q = L L^T``."""
        return self._chol

    @cached_property
    def inv_sqrt(self) -> np.ndarray:
        """Symmetric ``Q^{-1/2}``: maps the Euclidean unit ball onto this ball."""
        w, v = np.linalg.eigh(self.quad)
        return (v / np.sqrt(w)) @ v.T

    def __call__(self, x) -> float | np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"expected vectors of length {self.dim}, got {x.shape}")
        return np.linalg.norm(x @ self._chol, axis=-1)

    def scaled(self, power: int) -> "Gauge":
        """Gauge multiplied by ``2**power`` (the ball shrinks by the same factor)."""
        return Gauge(self.quad * 4.0**power)

    def to_dict(self) -> dict:
        idx = np.tril_indices(self.dim)
        return {"dim": self.dim, "chol": [float(v) for v in self._chol[idx]]}

    @classmethod
    def from_dict(cls, data: dict) -> "Gauge":
        dim = int(data["dim"])
        packed = np.asarray(data["chol"], dtype=float)
        if packed.size != dim * (dim + 1) // 2:
            raise DimensionError(
                f"packed cholesky factor needs {dim * (dim + 1) // 2} entries, got {packed.size}"
            )
        lower = np.zeros((dim, dim))
        lower[np.tril_indices(dim)] = packed
        return cls.from_cholesky(lower)


def gauge_eval(g: Gauge, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (g.dim,):
        raise DimensionError(f"vector of shape {x.shape} does not match gauge dim {g.dim}")
    return float(g(x))


class Membership(NamedTuple):
    inside: bool
    ratio: float


def membership(g: Gauge, x, scale: float = 1.0, margin: float = DEFAULT_MARGIN) -> Membership:
    """Test ``x in scale * Ball(g)`` up to a relative margin."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    ratio = gauge_eval(g, x) / scale
    return Membership(ratio <= 1.0 + margin, ratio)


class IntersectionGauge:
    """Gauge of ``B_1 ∩ ... ∩ B_k`` where ``B_i = scale_i * Ball(g_i)``."""

    def __init__(self, members: Sequence[tuple[Gauge, float]]):
        if not members:
            raise ValueError("intersection of an empty family")
        dims = {g.dim for g, _ in members}
        if len(dims) != 1:
            raise DimensionError(f"gauges of mixed dimension {sorted(dims)}")
        for _, s in members:
            if s <= 0:
                raise ValueError("scales must be positive")
        self.members = [(g, float(s)) for g, s in members]
        self.dim = dims.pop()

    def ratios(self, x) -> np.ndarray:
        return np.array([g(x) / s for g, s in self.members])

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"expected vectors of length {self.dim}")
        return np.max(self.ratios(x), axis=0)


def intersection_gauge(gauges: Sequence[tuple[Gauge, float]]) -> IntersectionGauge:
    return IntersectionGauge(gauges)


def min_gauge_ratio(stronger: Gauge, weaker: Gauge) -> float:
    """Largest c with ``stronger(x) >= c * weaker(x)`` for all x."""
    lam = linalg.eigh(stronger.quad, weaker.quad, eigvals_only=True)
    return math.sqrt(max(lam[0], 0.0))


def is_nested(system: Sequence[Gauge], tol: float = NESTING_TOL) -> bool:
    for a, b in zip(system, system[1:]):
        diff = b.quad - a.quad
        scale = max(1.0, np.linalg.norm(b.quad, 2))
        if np.linalg.eigvalsh(diff)[0] < -tol * scale:
            return False
    return True


def normalize_fundamental_system(
    system: Sequence[Gauge],
) -> tuple[list[Gauge], list[tuple[int, int]]]:
    """Thin and rescale a nested system so each gauge at least doubles the last.

    Returns the new gauges and, for each, ``(original_index, power)`` meaning
    ``new = 2**power * system[original_index]``.  Among the remaining
    candidates the one needing the smallest power is taken (earliest on
    ties), so entries are discarded only when that saves a rescaling.
    """
    system = list(system)
    if not system:
        raise ValueError("empty fundamental system")
    if len({g.dim for g in system}) != 1:
        raise DimensionError("gauges of mixed dimension")
    if not is_nested(system):
        raise NestingError("fundamental system is not nested")

    out = [system[0]]
    prov = [(0, 0)]
    i = 1
    while i < len(system):
        prev = out[-1]
        best = None
        for k in range(i, len(system)):
            power = _doubling_power(system[k], prev)
            if best is None or power < best[1]:
                best = (k, power)
        k, power = best
        out.append(system[k].scaled(power) if power else system[k])
        prov.append((k, power))
        i = k + 1
    return out, prov


def _doubling_power(cand: Gauge, prev: Gauge) -> int:
    r = min_gauge_ratio(cand, prev)
    if r <= 0:
        raise NestingError("candidate gauge is degenerate relative to predecessor")
    power = max(0, math.ceil(1.0 - math.log2(r) - 1e-12))
    # power-of-two scaling is exact, so bumping resolves eigensolver roundoff
    while min_gauge_ratio(cand.scaled(power), prev) < 2.0 * (1.0 - 1e-12):
        power += 1
    return power


@dataclass(frozen=True, eq=False)
class GradedSpace:
    dim: int
    system: tuple[Gauge, ...]
    labels: tuple[str, ...] | None = None
    provenance: tuple[tuple[int, int], ...] | None = field(default=None)

    def __post_init__(self):
        if self.dim <= 0:
            raise DimensionError("graded space dimension must be positive")
        system = tuple(self.system)
        if not system:
            raise ValueError("a graded space needs at least one gauge")
        for g in system:
            if g.dim != self.dim:
                raise DimensionError(f"gauge of dim {g.dim} in space of dim {self.dim}")
        if not is_nested(system):
            raise NestingError("fundamental system is not nested")
        if self.labels is not None and len(self.labels) != self.dim:
            raise DimensionError("labels must name every coordinate")
        object.__setattr__(self, "system", system)

    @classmethod
    def euclidean(cls, dim: int) -> "GradedSpace":
        return cls(dim, (Gauge.euclidean(dim),))

    def normalized(self) -> "GradedSpace":
        gauges, prov = normalize_fundamental_system(self.system)
        return GradedSpace(self.dim, tuple(gauges), self.labels, tuple(prov))

    def is_normalized(self, rtol: float = 1e-9) -> bool:
        return all(
            min_gauge_ratio(b, a) >= 2.0 * (1.0 - rtol)
            for a, b in zip(self.system, self.system[1:])
        )


def graded_sequence_system(dim: int, count: int, base: float = 2.0) -> list[Gauge]:
    """``q_p(x)^2 = sum_k k^(base*p) x_k^2`` for p = 1..count, k = 1..dim."""
    k = np.arange(1, dim + 1, dtype=float)
    return [Gauge.diagonal(k ** (base * p)) for p in range(1, count + 1)]
