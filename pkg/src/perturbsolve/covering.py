"""Finite nets for compact images and the induced quotient reduction.

All geometry is done in whitened coordinates where the gauge of ``V`` is
the Euclidean norm.  There ``K`` is an ellipsoid with principal axes
``axes[:, i]`` and semi-axis lengths ``semi[i]``; a point of ``K`` is
``axes @ (semi * v)`` with ``||v|| <= 1``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CoverError, DimensionError, NotOntoError
from .graded_space import DEFAULT_MARGIN, Gauge
from .operators import (
    RANK_RTOL,
    ImageEllipsoid,
    LinearOperator,
    containment_factor,
    image_of_ball,
    numerical_rank,
)

COVER_RADIUS = 0.5
SAFETY = 0.02
TAIL_LIMIT = 0.1
VERIFY_TRIALS = 4000
MAX_AUGMENT = 200


def _canonical_signs(cols: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive."""
    if cols.size == 0:
        return cols
    idx = np.argmax(np.abs(cols), axis=0)
    signs = np.sign(cols[idx, np.arange(cols.shape[1])])
    signs[signs == 0] = 1.0
    return cols * signs


class _WhitenedK:
    def __init__(self, K: ImageEllipsoid, V: ImageEllipsoid):
        if K.ambient_dim != V.ambient_dim:
            raise DimensionError("K and V live in different spaces")
        if not V.full_rank:
            raise NotOntoError("g not onto on truncation", V.singular_values)
        self.K, self.V = K, V
        self.T = V.whitener
        self.L = V.square_factor
        kt = self.T @ K.generator
        if kt.size == 0 or not np.any(kt):
            self.axes = np.zeros((V.ambient_dim, 0))
            self.semi = np.zeros(0)
            self.param = np.zeros((K.generator.shape[1], 0))
            return
        u, s, vt = np.linalg.svd(kt, full_matrices=False)
        r = int(np.sum(s > RANK_RTOL * s[0]))
        u = u[:, :r]
        signs = np.sign(u[np.argmax(np.abs(u), axis=0), np.arange(r)])
        signs[signs == 0] = 1.0
        self.axes = u * signs
        self.semi = s[:r]
        self.param = (vt[:r] * signs[:, None]).T

    @property
    def rank(self) -> int:
        return self.semi.size

    def to_ambient(self, v: np.ndarray) -> np.ndarray:
        """Points of K (rows) from ball coordinates v (rows)."""
        return (self.L @ (self.axes @ (self.semi * v).T)).T

    def to_param(self, v: np.ndarray) -> np.ndarray:
        """Generator coordinates u with ``M_K u`` equal to ``to_ambient(v)``."""
        return (self.param @ v.T).T


@dataclass
class Net:
    centers: np.ndarray
    params: np.ndarray
    verified_radius: float
    sample_radius: float = float("nan")
    augmented: int = 0
    V: ImageEllipsoid | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "centers": self.centers.tolist(),
            "verified_radius": self.verified_radius,
            "sample_radius": self.sample_radius,
            "augmented": self.augmented,
        }


def _ball_lattice(semi: np.ndarray, budget: int) -> np.ndarray:
    """Grid of ball coordinates v whose images ``semi * v`` are evenly spaced."""
    d = semi.size
    vol = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * float(np.prod(semi))
    h = (vol / (0.75 * budget)) ** (1.0 / d)
    while True:
        axes_pts = [np.linspace(s, -s, max(1, 2 * int(math.ceil(s / h)) + 1)) / s for s in semi]
        count = math.prod(a.size for a in axes_pts)
        if count <= 4 * budget:
            grid = np.array(list(itertools.product(*axes_pts))) if d else np.zeros((1, 0))
            grid = grid[np.sum(grid**2, axis=1) <= 1.0 + 1e-12]
            if grid.shape[0] <= budget:
                return grid
        h *= 1.2


def _sphere(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def greedy_net(
    K: ImageEllipsoid,
    V: ImageEllipsoid,
    sampler_budget: int = 40000,
    seed: int = 0,
    verify_trials: int = VERIFY_TRIALS,
) -> Net:
    """Farthest-point net of K in the gauge of V with radius 1/2.

    If the single centre 0 already works the net is ``[0]``.  Otherwise
    candidates come from an evenly spaced lattice over the dominant axes of
    K; coverage is measured on the lattice plus seeded boundary points of
    the full ellipsoid.  After the sample radius drops below
    ``(1 - SAFETY)/2``, adversarial verification runs and any uncovered
    point it finds is added as a centre.
    """
    wk = _WhitenedK(K, V)
    n_amb, n_par = K.ambient_dim, K.generator.shape[1]
    target = COVER_RADIUS * (1.0 - SAFETY)
    top = float(wk.semi[0]) if wk.rank else 0.0
    if top <= target:
        net = Net(np.zeros((1, n_amb)), np.zeros((1, n_par)), top, top, V=V)
        net.verified_radius = verify_cover(net, K, V, trials=verify_trials, seed=seed)
        return net

    rng = np.random.default_rng(seed)
    semi = wk.semi
    tail = np.sqrt(np.cumsum((semi**2)[::-1])[::-1])
    d = next((i for i in range(1, semi.size + 1) if i == semi.size or tail[i] <= TAIL_LIMIT))
    n_boundary = sampler_budget // 4
    grid = _ball_lattice(semi[:d], sampler_budget - n_boundary)
    lattice = np.hstack([grid, np.zeros((grid.shape[0], semi.size - d))])
    boundary = _sphere(rng, n_boundary, semi.size)
    coords_all = np.vstack([lattice, boundary])
    sample = coords_all * semi
    n_lat = lattice.shape[0]

    first = int(np.argmax(np.linalg.norm(sample[:n_lat], axis=1)))
    chosen = [first]
    dist = np.linalg.norm(sample - sample[first], axis=1)
    max_centers = max(16, sampler_budget // 20)
    while True:
        far = int(np.argmax(dist))
        if dist[far] <= target:
            break
        if len(chosen) >= max_centers:
            raise CoverError(
                "sampler budget exhausted before coverage",
                net=_make_net(wk, coords_all[chosen], V),
                radius=float(dist[far]),
            )
        # prefer the nearest lattice point so centres stay in the dominant axes
        nxt = int(np.argmin(np.linalg.norm(sample[:n_lat] - sample[far], axis=1)))
        if nxt in chosen:
            nxt = far
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(sample - sample[nxt], axis=1))
    sample_radius = float(dist.max())

    coords = coords_all[chosen]
    accept = COVER_RADIUS * (1.0 - SAFETY / 4)
    for extra in range(MAX_AUGMENT + 1):
        worst, v = _adversarial_cover(wk, coords, verify_trials, seed)
        if worst <= accept:
            net = _make_net(wk, coords, V)
            net.sample_radius = sample_radius
            net.verified_radius = worst
            net.augmented = extra
            return net
        coords = np.vstack([coords, v])
    raise CoverError(
        "adversarial refinement did not converge",
        net=_make_net(wk, coords, V),
        radius=worst,
    )


def _make_net(wk: _WhitenedK, coords: np.ndarray, V) -> Net:
    return Net(wk.to_ambient(coords), wk.to_param(coords), float("nan"), V=V)


def _cover_distance(wk, a, b2, v):
    """Distance from the K-point with ball coordinates v to the nearest centre."""
    p = wk.semi * v
    return math.sqrt(float(np.min(np.sum((p - a) ** 2, axis=1) + b2)))


def _adversarial_cover(wk: _WhitenedK, coords_or_centers, trials: int, seed: int, whitened=False):
    """Multi-start ascent of ``min_j gauge_V(y - c_j)`` over y in K.

    Returns the best value and the maximising ball coordinates.
    """
    if whitened:
        c = coords_or_centers
    else:
        c = (wk.axes @ (wk.semi * coords_or_centers).T).T
    r = wk.rank
    if r == 0:
        return float(np.min(np.linalg.norm(c, axis=1))), np.zeros(0)
    a = c @ wk.axes
    b2 = np.maximum(np.sum(c**2, axis=1) - np.sum(a**2, axis=1), 0.0)

    rng = np.random.default_rng(seed + 7919)
    n_b = max(1, trials // 2)
    starts = _sphere(rng, n_b, r)
    inner = _sphere(rng, max(1, trials - n_b), r) * rng.random((max(1, trials - n_b), 1)) ** (1.0 / r)
    pts = np.vstack([starts, inner])
    p = pts * wk.semi
    d2 = np.min(np.sum((p[:, None, :] - a[None, :, :]) ** 2, axis=2) + b2[None, :], axis=1)
    order = np.argsort(-d2, kind="stable")[: min(24, pts.shape[0])]

    best_val, best_v = -1.0, None
    for idx in order:
        v = pts[idx].copy()
        val = _cover_distance(wk, a, b2, v)
        step = 0.1
        while step > 1e-9:
            improved = False
            for i in range(r):
                for sgn in (1.0, -1.0):
                    trial = v.copy()
                    trial[i] += sgn * step
                    nrm = np.linalg.norm(trial)
                    if nrm > 1.0:
                        trial /= nrm
                    tv = _cover_distance(wk, a, b2, trial)
                    if tv > val:
                        v, val, improved = trial, tv, True
            if not improved:
                step *= 0.5
        if val > best_val:
            best_val, best_v = val, v
    return best_val, best_v


def verify_cover(net: Net, K: ImageEllipsoid, V: ImageEllipsoid, trials: int = VERIFY_TRIALS, seed: int = 0) -> float:
    """Worst distance (gauge of V) from a point of K to the net that search finds.

    This is a lower bound on the true covering radius, never a proof.
    """
    wk = _WhitenedK(K, V)
    centers = np.atleast_2d(np.asarray(net.centers, dtype=float))
    if centers.shape[0] == 0:
        return float("inf")
    c = (wk.T @ centers.T).T
    if wk.rank == 0:
        return float(np.min(np.linalg.norm(c, axis=1)))
    val, _ = _adversarial_cover(wk, c, trials, seed, whitened=True)
    return val


def net_in_K(net: Net, K: ImageEllipsoid, tol: float = 1e-9) -> bool:
    for y in net.centers:
        g, res = K.locate(y)
        if g > 1.0 + tol or res > tol * max(1.0, K.radius):
            return False
    return True


@dataclass
class QuotientReduction:
    defect_basis: np.ndarray
    projector: np.ndarray
    induced_f: LinearOperator
    induced_g: LinearOperator
    reduced_factor: float
    net: Net | None = None

    @property
    def quotient_dim(self) -> int:
        return self.projector.shape[0]

    @property
    def defect_dim(self) -> int:
        return self.defect_basis.shape[1]

    def to_dict(self) -> dict:
        return {
            "defect_dim": self.defect_dim,
            "quotient_dim": self.quotient_dim,
            "reduced_factor": self.reduced_factor,
            "defect_basis": self.defect_basis.tolist(),
        }


def complement_projector(vectors: np.ndarray, ambient_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis B of ``span(vectors)`` and rows P spanning its complement."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float)).reshape(-1, ambient_dim)
    c = vectors.T
    r = numerical_rank(c) if c.size else 0
    if r == 0:
        return np.zeros((ambient_dim, 0)), np.eye(ambient_dim)
    u, _, _ = np.linalg.svd(c)
    basis = _canonical_signs(u[:, :r])
    comp = _canonical_signs(u[:, r:])
    return basis, comp.T


def quotient_reduce(f: LinearOperator, g: LinearOperator, U: Gauge, net: Net) -> QuotientReduction:
    m = g.codomain_dim
    if f.shape != g.shape:
        raise DimensionError("f and g must share domain and codomain")
    basis, proj = complement_projector(net.centers, m)
    f_red = LinearOperator(proj @ f.matrix)
    g_red = LinearOperator(proj @ g.matrix)
    if proj.shape[0] == 0:
        factor = 0.0
    else:
        V_red = image_of_ball(g_red, U)
        if not V_red.full_rank:
            raise NotOntoError("induced g is not onto the quotient", V_red.singular_values)
        factor = containment_factor(image_of_ball(f_red, U), V_red)
    return QuotientReduction(basis, proj, f_red, g_red, factor, net)


def trivial_reduction(f: LinearOperator, g: LinearOperator, factor: float) -> QuotientReduction:
    m = g.codomain_dim
    net = Net(np.zeros((1, m)), np.zeros((1, f.domain_dim)), factor, factor)
    return QuotientReduction(np.zeros((m, 0)), np.eye(m), f, g, factor, net)


@dataclass
class ReductionChain:
    """Composite of one or more quotient rounds."""

    rounds: list[QuotientReduction]
    initial_factor: float
    ambient_dim: int

    @property
    def projector(self) -> np.ndarray:
        p = np.eye(self.ambient_dim)
        for red in self.rounds:
            p = red.projector @ p
        return p

    @property
    def defect_basis(self) -> np.ndarray:
        p = self.projector
        if p.shape[0] == 0:
            return np.eye(self.ambient_dim)
        _, s, vt = np.linalg.svd(p)
        return _canonical_signs(vt[p.shape[0]:].T)

    @property
    def net_size(self) -> int:
        return sum(r.net.size for r in self.rounds if r.net is not None)

    @property
    def reduced_factor(self) -> float:
        return self.rounds[-1].reduced_factor if self.rounds else self.initial_factor

    @property
    def induced_f(self) -> LinearOperator:
        return self.rounds[-1].induced_f

    @property
    def induced_g(self) -> LinearOperator:
        return self.rounds[-1].induced_g

    def to_dict(self) -> dict:
        return {
            "initial_factor": self.initial_factor,
            "reduced_factor": self.reduced_factor,
            "net_size": self.net_size,
            "defect_dim": int(self.defect_basis.shape[1]),
            "rounds": [
                {**r.to_dict(), "net": r.net.to_dict() if r.net is not None else None}
                for r in self.rounds
            ],
        }


def reduce_until(
    f: LinearOperator,
    g: LinearOperator,
    U: Gauge,
    threshold: float = 0.5 * (1 - 1e-3),
    max_rounds: int = 3,
    sampler_budget: int = 40000,
    seed: int = 0,
    verify_trials: int = VERIFY_TRIALS,
) -> ReductionChain:
    """Net-and-quotient rounds until the containment factor is below threshold.

    A pair already below the threshold gets the trivial net ``[0]`` and an
    identity projector.
    """
    K = image_of_ball(f, U)
    V = image_of_ball(g, U)
    chain = ReductionChain([], containment_factor(K, V), g.codomain_dim)
    if chain.initial_factor <= threshold:
        chain.rounds.append(trivial_reduction(f, g, chain.initial_factor))
        return chain
    cur_f, cur_g = f, g
    for rnd in range(max_rounds):
        net = greedy_net(K, V, sampler_budget, seed + rnd, verify_trials)
        red = quotient_reduce(cur_f, cur_g, U, net)
        chain.rounds.append(red)
        if red.reduced_factor <= threshold:
            return chain
        cur_f, cur_g = red.induced_f, red.induced_g
        K, V = image_of_ball(cur_f, U), image_of_ball(cur_g, U)
    raise CoverError(
        f"reduced factor {chain.reduced_factor:.6g} still above {threshold} after {max_rounds} rounds",
        radius=chain.reduced_factor,
    )
