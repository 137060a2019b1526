"""Dense operators, image ellipsoids and preimage selection."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import linalg, optimize

from .errors import DimensionError, NotOntoError, PreimageError
from .graded_space import DEFAULT_MARGIN, Gauge, GradedSpace

RANK_RTOL = 1e-10
PREIMAGE_GAP_RTOL = 1e-12
MAX_ROOT_ITER = 200
MAX_DUAL_STEPS = 2000


def numerical_rank(a, rtol: float = RANK_RTOL) -> int:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def _spectral_norm(a) -> float:
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


@dataclass(frozen=True, eq=False)
class LinearOperator:
    matrix: np.ndarray
    domain: GradedSpace | None = None
    codomain: GradedSpace | None = None
    name: str = ""

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2:
            raise DimensionError(f"operator matrix must be 2-D, got shape {m.shape}")
        if self.domain is not None and self.domain.dim != m.shape[1]:
            raise DimensionError("matrix columns do not match domain dimension")
        if self.codomain is not None and self.codomain.dim != m.shape[0]:
            raise DimensionError("matrix rows do not match codomain dimension")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def domain_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def codomain_dim(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, x) -> np.ndarray:
        return apply(self, x)

    def __add__(self, other: "LinearOperator") -> "LinearOperator":
        if self.shape != other.shape:
            raise DimensionError(f"cannot add operators of shapes {self.shape} and {other.shape}")
        return LinearOperator(self.matrix + other.matrix, self.domain, self.codomain)

    def __neg__(self) -> "LinearOperator":
        return LinearOperator(-self.matrix, self.domain, self.codomain)

    def after(self, p: np.ndarray) -> "LinearOperator":
        """``p ∘ self`` for a plain matrix ``p`` acting on the codomain."""
        return LinearOperator(np.asarray(p, dtype=float) @ self.matrix, self.domain)

    def to_dict(self) -> dict:
        rows, cols = self.shape
        return {"rows": rows, "cols": cols, "data": [float(v) for v in self.matrix.ravel()]}

    @classmethod
    def from_dict(cls, data: dict) -> "LinearOperator":
        rows, cols = int(data["rows"]), int(data["cols"])
        entries = np.asarray(data["data"], dtype=float)
        if entries.size != rows * cols:
            raise DimensionError(f"expected {rows * cols} entries, got {entries.size}")
        return cls(entries.reshape(rows, cols))


def apply(a: LinearOperator, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != a.domain_dim:
        raise DimensionError(f"vector of length {x.shape[-1]} outside domain of dim {a.domain_dim}")
    return x @ a.matrix.T if x.ndim > 1 else a.matrix @ x


@dataclass(frozen=True, eq=False)
class ImageEllipsoid:
    """The set ``{M u : ||u||_2 <= 1}`` for a generator matrix M."""

    generator: np.ndarray

    def __post_init__(self):
        m = np.array(self.generator, dtype=float)
        if m.ndim != 2:
            raise DimensionError("generator must be 2-D")
        m.setflags(write=False)
        object.__setattr__(self, "generator", m)

    @property
    def ambient_dim(self) -> int:
        return self.generator.shape[0]

    @cached_property
    def _svd(self):
        m = self.generator
        if m.size == 0:
            n = m.shape[0]
            return np.zeros((n, 0)), np.zeros(0), np.zeros((0, m.shape[1]))
        u, s, vt = np.linalg.svd(m, full_matrices=False)
        r = 0 if s[0] == 0.0 else int(np.sum(s > RANK_RTOL * s[0]))
        return u[:, :r], s[:r], vt[:r]

    @property
    def rank(self) -> int:
        return self._svd[1].size

    @property
    def full_rank(self) -> bool:
        return self.rank == self.ambient_dim

    @property
    def singular_values(self) -> np.ndarray:
        return self._svd[1]

    @property
    def radius(self) -> float:
        """Largest Euclidean norm of a point in the set."""
        s = self._svd[1]
        return float(s[0]) if s.size else 0.0

    def support(self, w) -> float | np.ndarray:
        """Support function ``max_{y in set} <w, y> = ||M^T w||``."""
        w = np.asarray(w, dtype=float)
        return np.linalg.norm(w @ self.generator, axis=-1)

    def locate(self, y) -> tuple[float, float]:
        """Minimal ``||u||`` over least-squares solutions of ``M u = y``, and the residual."""
        u, s, _ = self._svd
        y = np.asarray(y, dtype=float)
        if s.size == 0:
            return 0.0, float(np.linalg.norm(y))
        c = u.T @ y
        return float(np.linalg.norm(c / s)), float(np.linalg.norm(y - u @ c))

    def gauge(self, y, rtol: float = 1e-9) -> float:
        """Minkowski functional of the set; infinite off its span."""
        g, res = self.locate(y)
        if res > rtol * max(float(np.linalg.norm(y)), self.radius, 1e-300):
            return float("inf")
        return g

    @cached_property
    def whitener(self) -> np.ndarray:
        """Matrix T with ``gauge(y) = ||T y||`` (full-rank sets only)."""
        if not self.full_rank:
            raise NotOntoError("set has empty interior", self._svd[1])
        u, s, _ = self._svd
        return u.T / s[:, None]

    @cached_property
    def square_factor(self) -> np.ndarray:
        """Square L with ``L L^T = M M^T`` (full-rank sets only)."""
        if not self.full_rank:
            raise NotOntoError("set has empty interior", self._svd[1])
        u, s, _ = self._svd
        return u * s

    def scaled(self, alpha: float) -> "ImageEllipsoid":
        return ImageEllipsoid(alpha * self.generator)


def image_of_ball(a: LinearOperator, U: Gauge) -> ImageEllipsoid:
    if U.dim != a.domain_dim:
        raise DimensionError("gauge and operator domain disagree")
    return ImageEllipsoid(a.matrix @ U.inv_sqrt)


def containment_factor(K: ImageEllipsoid, V: ImageEllipsoid) -> float:
    """``sup_{y in K} gauge_V(y)``; K lies in cV iff the factor is <= c."""
    if K.ambient_dim != V.ambient_dim:
        raise DimensionError("ellipsoids live in different spaces")
    if V.ambient_dim == 0:
        return 0.0
    if not V.full_rank:
        raise NotOntoError("g not onto on truncation", V.singular_values)
    return _spectral_norm(V.whitener @ K.generator)


def _require_onto(g: LinearOperator):
    m = g.matrix
    if m.shape[0] == 0:
        return np.zeros(0)
    if m.shape[0] > m.shape[1]:
        raise NotOntoError(f"{m.shape[0]}x{m.shape[1]} operator cannot be onto")
    s = np.linalg.svd(m, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= RANK_RTOL * s[0]:
        raise NotOntoError("operator is not onto (rank deficient)", s)
    return s


def min_gauge_right_inverse(g: LinearOperator, U: Gauge) -> LinearOperator:
    """R with ``g R = I`` and ``U(R y) = min {U(x) : g x = y}``."""
    _require_onto(g)
    if U.dim != g.domain_dim:
        raise DimensionError("gauge and operator domain disagree")
    m, n = g.shape
    if m == 0:
        return LinearOperator(np.zeros((n, 0)))
    # substitute x = L^{-T} v so the weighted problem becomes min ||v||
    lt = U.chol.T
    gt = linalg.solve_triangular(lt, g.matrix.T, trans="T", lower=False).T
    r = linalg.solve_triangular(lt, np.linalg.pinv(gt), lower=False)
    return LinearOperator(r, g.codomain, g.domain)


@dataclass
class PreimageResult:
    x: np.ndarray
    t: float
    ratios: np.ndarray
    feasible: bool
    weights: np.ndarray
    steps: int


class PreimageSolver:
    """Minimises ``max_i gauge_i(x)/bound_i`` subject to ``g x = y``.

    The problem is handled through its dual over the simplex of weights
    ``lam``: for fixed weights the minimiser of ``sum lam_i gauge_i(x)^2``
    on the affine set is a weighted least-norm solution, and the dual
    derivative along a pair ``(i, j)`` is ``gauge_i^2 - gauge_j^2``.  Mass is
    moved between the largest and smallest active term with a bisection
    line search; with two constraints this is exactly a bisection sweep of
    ``(1 - lam) gauge_1^2 + lam gauge_2^2``.
    """

    def __init__(self, g: LinearOperator):
        _require_onto(g)
        self.g = g
        m, n = g.shape
        self.n = n
        if m == 0:
            self._pinv = np.zeros((n, 0))
            self._null = np.eye(n)
        else:
            u, s, vt = np.linalg.svd(g.matrix)
            self._pinv = (vt[:m].T / s) @ u.T
            self._null = vt[m:].T

    def particular(self, y) -> np.ndarray:
        return self._pinv @ np.asarray(y, dtype=float)

    def solve(self, y, constraints: Sequence[tuple[Gauge, float]], margin: float = DEFAULT_MARGIN):
        if not constraints:
            raise ValueError("at least one constraint is required")
        y = np.asarray(y, dtype=float)
        if y.shape != (self.g.codomain_dim,):
            raise DimensionError(f"target of shape {y.shape} outside codomain")
        quads = []
        for gauge, bound in constraints:
            if gauge.dim != self.n:
                raise DimensionError("constraint gauge outside domain")
            if bound <= 0:
                raise ValueError("constraint bounds must be positive")
            quads.append(gauge.quad / bound**2)
        k = len(quads)
        xp = self.particular(y)
        nb = self._null
        # everything below lives in null-space coordinates: x = xp - nb @ w
        A = np.array([nb.T @ q @ nb for q in quads])
        c = np.array([nb.T @ (q @ xp) for q in quads])
        e = np.array([xp @ q @ xp for q in quads])

        def minimiser(lam):
            if nb.shape[1] == 0:
                return np.zeros(0)
            return np.linalg.solve(np.tensordot(lam, A, 1), lam @ c)

        def sq_ratios_w(w):
            return e - 2.0 * (c @ w) + np.einsum("i,kij,j->k", w, A, w)

        def result(x, lam, steps):
            r = np.sqrt(np.maximum([x @ q @ x for q in quads], 0.0))
            t = float(r.max())
            return PreimageResult(x, t, r, t <= 1.0 + margin, lam, steps)

        if not np.any(y):
            return result(np.zeros(self.n), np.full(k, 1.0 / k), 0)

        # a single term alone may already be the binding one
        best = None
        duals = np.empty(k)
        for i in range(k):
            lam = np.eye(k)[i]
            w = minimiser(lam)
            phi = sq_ratios_w(w)
            duals[i] = phi[i]
            if phi[i] >= phi.max() * (1.0 - PREIMAGE_GAP_RTOL):
                return result(xp - nb @ w, lam, 0)
            if best is None or phi.max() < best[0]:
                best = (phi.max(), w, lam)

        lam = np.eye(k)[int(np.argmax(duals))]
        steps = 0
        for _ in range(MAX_DUAL_STEPS):
            w = minimiser(lam)
            phi = sq_ratios_w(w)
            primal, dual = phi.max(), float(lam @ phi)
            if primal < best[0]:
                best = (primal, w, lam.copy())
            if primal - dual <= PREIMAGE_GAP_RTOL * primal:
                return result(xp - nb @ w, lam, steps)
            i = int(np.argmax(phi))
            active = np.flatnonzero(lam > 0)
            j = int(active[np.argmin(phi[active])])
            lam, n_eval = self._line_search(minimiser, sq_ratios_w, lam, i, j)
            steps += n_eval
        raise PreimageError(
            "constrained preimage did not converge",
            best=result(xp - nb @ best[1], best[2], steps),
        )

    @staticmethod
    def _line_search(minimiser, sq_ratios_w, lam, i, j):
        """Move weight from j to i until the two gauge terms balance.

        Along this line the dual is concave, so its slope is monotone and a
        bracketing root finder applies.
        """
        def shifted(delta):
            trial = lam.copy()
            trial[i] += delta
            trial[j] -= delta
            return trial

        def slope(delta):
            phi = sq_ratios_w(minimiser(shifted(delta)))
            return phi[i] - phi[j]

        hi = float(lam[j])
        if slope(hi) >= 0:
            return shifted(hi), 1
        root, info = optimize.brentq(slope, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                                     maxiter=MAX_ROOT_ITER, full_output=True, disp=False)
        return shifted(root), info.function_calls + 1


def constrained_preimage(
    g: LinearOperator,
    y,
    constraints: Sequence[tuple[Gauge, float]],
    margin: float = DEFAULT_MARGIN,
) -> PreimageResult:
    return PreimageSolver(g).solve(y, constraints, margin)
