"""Successive approximation for ``(f + g) z = y`` with membership certificates.

Each step picks a small preimage ``x_j`` of the current defect ``y_j`` under
``g``, then sets ``y_{j+1} = y_j - (f + g) x_j``.  When the image ``K`` of the
unit ball under ``f`` sits inside half the image ``V`` under ``g`` the defect
at least halves in the gauge of V, and the schedule ``n_p`` keeps the partial
sums Cauchy in every grade ``W_p`` of the domain.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import HypothesisError, IterationError, PreimageError, ScheduleError
from .graded_space import DEFAULT_MARGIN, Gauge, GradedSpace
from .operators import (
    LinearOperator,
    PreimageSolver,
    containment_factor,
    image_of_ball,
    min_gauge_right_inverse,
    numerical_rank,
)

WINDOW = (-8, 56)
ENTRY_SLACK = 1e-3
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200
SCHEDULE_SAMPLES = 500
REFINE_STARTS = 5
REFINE_STEPS = 50
IDENTITY_RTOL = 1e-10


def _gauges(system) -> list[Gauge]:
    if isinstance(system, GradedSpace):
        return list(system.system)
    return list(system)


def _spectral(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, 2)) if a.size else 0.0


def check_hypothesis(f: LinearOperator, g: LinearOperator, U: Gauge, limit: float) -> float:
    factor = containment_factor(image_of_ball(f, U), image_of_ball(g, U))
    if factor > limit:
        raise HypothesisError(
            f"containment factor {factor:.6g} exceeds {limit:.6g}", factor
        )
    return factor


@dataclass
class Schedule:
    entries: list[int]
    method: str
    methods: list[str]
    window: tuple[int, int] = WINDOW
    worst_ratios: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "entries": list(self.entries),
            "method": self.method,
            "methods": list(self.methods),
            "window": list(self.window),
            "worst_ratios": list(self.worst_ratios),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Schedule":
        return cls(
            [int(n) for n in data["entries"]],
            data.get("method", ""),
            list(data.get("methods", [])),
            tuple(data.get("window", WINDOW)),
            list(data.get("worst_ratios", [])),
        )


class _Feasibility:
    """Decides ``K ⊆ g(½U ∩ 2^{n_1-1}W_1 ∩ ... ∩ 2^{n_p-1}W_p)``."""

    def __init__(self, f, g, U, gauges, margin, samples, seed):
        self.U, self.gauges, self.margin = U, gauges, margin
        self.K = image_of_ball(f, U)
        R = min_gauge_right_inverse(g, U).matrix
        rk = R @ self.K.generator
        self.ri_norms = np.array([_spectral(U.chol.T @ rk)] + [_spectral(w.chol.T @ rk) for w in gauges])
        self.has_kernel = g.domain_dim > g.codomain_dim
        # each constraint on its own: sup over K of its least gauge is a lower bound on t
        self.lb_norms = np.array([
            _spectral(w.chol.T @ min_gauge_right_inverse(g, w).matrix @ self.K.generator)
            for w in [U] + list(gauges)
        ]) if self.has_kernel else self.ri_norms
        self.solver = PreimageSolver(g) if self.has_kernel else None
        self.g_matrix = g.matrix
        self.samples = samples
        self.seed = seed
        self._ys = None

    def bounds(self, prefix, n):
        return np.array([0.5] + [2.0 ** (m - 1) for m in prefix] + [2.0 ** (n - 1)])

    def __call__(self, prefix: Sequence[int], n: int):
        b = self.bounds(prefix, n)
        ri = float(np.max(self.ri_norms[: b.size] / b))
        if ri <= 1.0 + self.margin:
            return True, ri, "right-inverse bound", None
        if not self.has_kernel:
            return False, ri, "right-inverse bound", None
        lb = float(np.max(self.lb_norms[: b.size] / b))
        if lb > 1.0 + self.margin:
            return False, lb, "single-constraint bound", None
        worst, y = self._sampled(b)
        return worst <= 1.0 + self.margin, worst, "constrained search", y

    def _sample_points(self):
        """Seeded boundary points of K in its principal coordinates ``y = B v``, ``|v| = 1``."""
        if self._ys is None:
            u, sv, _ = np.linalg.svd(self.K.generator, full_matrices=False)
            r = int(np.sum(sv > 1e-12 * sv[0])) if sv.size and sv[0] > 0 else 0
            self._basis = u[:, :r] * sv[:r]
            rng = np.random.default_rng(self.seed)
            v = rng.standard_normal((self.samples, max(r, 1)))[:, :r]
            v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-300)
            self._vs = v
            self._ys = v @ self._basis.T
        return self._vs, self._ys

    def _solve(self, y, cons):
        try:
            return self.solver.solve(y, cons, self.margin)
        except PreimageError as exc:
            return exc.best

    def _t(self, y, cons):
        return self._solve(y, cons).t

    def _ascend(self, v, cons, quads):
        """Minorise-maximise ascent of t over the boundary of K.

        With the optimal weights ``lam`` at y, ``y' (g Q_lam^-1 g')^-1 y`` is a
        quadratic lower bound for ``t(y)^2`` that is tight at y, so its top
        eigenvector on the boundary of K never decreases t.
        """
        B, gm = self._basis, self.g_matrix
        res = self._solve(B @ v, cons)
        val = res.t
        for _ in range(REFINE_STEPS):
            if val > 1.0 + self.margin:
                break
            q = np.tensordot(res.weights, quads, 1)
            m = np.linalg.inv(gm @ np.linalg.solve(q, gm.T))
            w, vecs = np.linalg.eigh(B.T @ m @ B)
            nv = vecs[:, -1] * (1.0 if vecs[:, -1] @ v >= 0 else -1.0)
            nres = self._solve(B @ nv, cons)
            if nres.t <= val * (1.0 + 1e-12):
                break
            v, res, val = nv, nres, nres.t
        return val, B @ v

    def _sampled(self, b):
        us, ys = self._sample_points()
        gl = [self.U] + self.gauges[: b.size - 1]
        cons = list(zip(gl, b))
        quads = [g.quad / bb**2 for g, bb in cons]
        k = len(quads)
        # weighted least-norm maps are linear in y, so any weight vector
        # gives a cheap upper bound on t for every sample at once
        grid = [np.eye(k)[i] for i in range(k)]
        for i, j in itertools.combinations(range(k), 2):
            for s in np.linspace(0.1, 0.9, 9):
                lam = np.zeros(k)
                lam[i], lam[j] = 1 - s, s
                grid.append(lam)
        grid.append(np.full(k, 1.0 / k))
        pinv = self.solver._pinv
        upper = np.full(ys.shape[0], np.inf)
        eye = np.eye(self.solver.n)
        for lam in grid:
            qsum = np.tensordot(lam, quads, 1)
            nb = self.solver._null
            a = nb.T @ qsum @ nb
            proj = eye - nb @ np.linalg.solve(a, nb.T @ qsum)
            xs = ys @ (proj @ pinv).T
            t = np.sqrt(np.max([np.einsum("ij,jk,ik->i", xs, q, xs) for q in quads], axis=0))
            upper = np.minimum(upper, t)
        tvals = upper.copy()
        for i in np.flatnonzero(upper > 1.0 + self.margin):
            tvals[i] = self._t(ys[i], cons)
            if tvals[i] > 1.0 + self.margin:
                return float(tvals[i]), ys[i]
        order = np.argsort(-tvals, kind="stable")[:REFINE_STARTS]
        worst_i = int(order[0])
        worst, worst_y = float(tvals[worst_i]), ys[worst_i]
        for i in order:
            val, y = self._ascend(us[i], cons, quads)
            if val > worst:
                worst, worst_y = val, y
        return worst, worst_y


def compute_schedule(
    f: LinearOperator,
    g: LinearOperator,
    U: Gauge,
    system,
    p_max: int | None = None,
    margin: float = DEFAULT_MARGIN,
    window: tuple[int, int] = WINDOW,
    samples: int = SCHEDULE_SAMPLES,
    seed: int = 0,
) -> Schedule:
    """Smallest ``n_p`` in ``[p + window[0], p + window[1]]`` for each grade.

    Feasibility is tested cumulatively: grade p is checked together with the
    already fixed ``n_1..n_{p-1}``, so one preimage satisfies every active
    constraint at once.  The exact right-inverse bound settles most cases;
    when g has a kernel and that bound fails, seeded boundary samples of K
    plus a local ascent decide.  Feasibility is monotone in n, so the
    window is bisected.
    """
    gauges = _gauges(system)
    p_max = len(gauges) if p_max is None else min(p_max, len(gauges))
    check_hypothesis(f, g, U, 0.5 * (1.0 + margin))
    feas = _Feasibility(f, g, U, gauges, margin, samples, seed)

    entries, methods, worst = [], [], []
    for p in range(1, p_max + 1):
        lo, hi = p + window[0], p + window[1]
        ok, ratio, how, y = feas(entries, lo)
        if ok:
            found, info = lo, (ratio, how)
        else:
            ok, ratio, how, y = feas(entries, hi)
            if not ok:
                raise ScheduleError(
                    f"no n_{p} in [{lo}, {hi}] (worst ratio {ratio:.6g})",
                    p=p, worst_y=y, worst_ratio=ratio,
                )
            info = (ratio, how)
            while hi - lo > 1:
                mid = (lo + hi) // 2
                ok, ratio, how, _ = feas(entries, mid)
                if ok:
                    hi, info = mid, (ratio, how)
                else:
                    lo = mid
            found = hi
        n = max(found, entries[-1]) if entries else found
        if n != found:
            ratio, how, _y = feas(entries, n)[1:]
            info = (ratio, how)
        entries.append(n)
        worst.append(float(info[0]))
        methods.append(info[1])
    method = "right-inverse bound" if all(m == "right-inverse bound" for m in methods) else "constrained search"
    return Schedule(entries, method, methods, window, worst)


def active_constraints(U: Gauge, gauges: Sequence[Gauge], schedule: Schedule, j: int):
    """Constraints a step-j preimage must meet, with their labels."""
    cons = [(U, 2.0**-j)]
    labels = ["U"]
    if j >= 1:
        for p, (w, n) in enumerate(zip(gauges, schedule.entries), start=1):
            if j > n:
                cons.append((w, 2.0 ** (n - j)))
                labels.append(f"W{p}")
    return cons, labels


@dataclass
class IterationTrace:
    y_seq: np.ndarray
    x_seq: np.ndarray
    z_partial: np.ndarray
    ratios: list[dict]
    selection: list[str]
    consistency: list[float]
    f: np.ndarray
    g: np.ndarray
    U: Gauge
    system: list[Gauge]
    schedule: Schedule
    scale: float = 1.0

    @property
    def steps(self) -> int:
        return self.x_seq.shape[0]

    @property
    def z(self) -> np.ndarray:
        if self.steps == 0:
            return np.zeros(self.f.shape[1])
        return self.z_partial[-1]

    def table(self) -> tuple[list[str], list[list]]:
        """Per-step rows: j, gauge_V(y_j), gauge_U(x_j), gauge_Wp(x_j)..., ||y_j||/||y_0||."""
        P = len(self.system)
        header = ["j", "res_V", "gauge_U"] + [f"gauge_W{p}" for p in range(1, P + 1)] + ["residual"]
        V = image_of_ball(LinearOperator(self.g), self.U)
        ny0 = float(np.linalg.norm(self.y_seq[0])) or 1.0
        rows = []
        for j, y in enumerate(self.y_seq):
            row = [j, V.gauge(y)]
            if j < self.steps:
                x = self.x_seq[j]
                row += [float(self.U(x))] + [float(w(x)) for w in self.system]
            else:
                row += [None] * (1 + P)
            row.append(float(np.linalg.norm(y)) / ny0)
            rows.append(row)
        return header, rows

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "y_seq": self.y_seq.tolist(),
            "x_seq": self.x_seq.tolist(),
            "selection": list(self.selection),
            "f": {"rows": self.f.shape[0], "cols": self.f.shape[1], "data": self.f.ravel().tolist()},
            "g": {"rows": self.g.shape[0], "cols": self.g.shape[1], "data": self.g.ravel().tolist()},
            "U": self.U.to_dict(),
            "system": [w.to_dict() for w in self.system],
            "schedule": self.schedule.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IterationTrace":
        f = LinearOperator.from_dict(data["f"]).matrix
        g = LinearOperator.from_dict(data["g"]).matrix
        xs = np.asarray(data["x_seq"], dtype=float).reshape(-1, f.shape[1])
        ys = np.asarray(data["y_seq"], dtype=float).reshape(-1, f.shape[0])
        return cls(
            y_seq=ys,
            x_seq=xs,
            z_partial=np.cumsum(xs, axis=0),
            ratios=[],
            selection=list(data.get("selection", [])),
            consistency=[],
            f=f,
            g=g,
            U=Gauge.from_dict(data["U"]),
            system=[Gauge.from_dict(w) for w in data["system"]],
            schedule=Schedule.from_dict(data["schedule"]),
            scale=float(data.get("scale", 1.0)),
        )


@dataclass
class SolveReport:
    z: np.ndarray
    final_residual: float
    iterations: int
    contraction_ratio: float
    consistency_worst: float
    telescoping_worst: float
    selections: dict
    singular_margin: float
    certificate_worst: dict = field(default_factory=dict)
    codim_bound: int | None = None
    rank_codim: int | None = None

    def to_dict(self) -> dict:
        return {
            "z": self.z.tolist(),
            "final_residual": self.final_residual,
            "iterations": self.iterations,
            "contraction_ratio": self.contraction_ratio,
            "consistency_worst": self.consistency_worst,
            "telescoping_worst": self.telescoping_worst,
            "selections": self.selections,
            "singular_margin": self.singular_margin,
            "certificate_worst": self.certificate_worst,
            "codim_bound": self.codim_bound,
            "rank_codim": self.rank_codim,
        }


def successive_approximation(
    f: LinearOperator,
    g: LinearOperator,
    U: Gauge,
    system,
    schedule: Schedule,
    y0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    margin: float = DEFAULT_MARGIN,
) -> tuple[IterationTrace, SolveReport]:
    """Run the iteration from ``y0 ∈ V`` until the defect is below ``tol``.

    Stops once both ``||y_j|| / ||y_0||`` and ``gauge_V(y_j) / gauge_V(y_0)``
    are at most ``tol``.  The minimum-gauge preimage is used whenever it
    meets every active constraint, otherwise the constrained program.
    """
    gauges = _gauges(system)
    check_hypothesis(f, g, U, 0.5 * (1.0 + margin))
    V = image_of_ball(g, U)
    y0 = np.asarray(y0, dtype=float)
    gv0 = V.gauge(y0)
    if not gv0 < 1.0:
        raise ValueError(f"y0 must lie in V (gauge {gv0:.6g}); use solve_any")
    R = min_gauge_right_inverse(g, U).matrix
    solver = PreimageSolver(g)
    fm, gm = f.matrix, g.matrix
    hm = fm + gm
    ny0 = float(np.linalg.norm(y0))

    ys, xs, ratios, selection, consistency = [y0], [], [], [], []

    def trace():
        x_arr = np.array(xs).reshape(-1, f.domain_dim)
        return IterationTrace(
            np.array(ys), x_arr, np.cumsum(x_arr, axis=0), ratios, selection,
            consistency, fm, gm, U, gauges, schedule,
        )

    y = y0
    for j in range(max_iter + 1):
        if np.linalg.norm(y) <= tol * ny0 and V.gauge(y) <= tol * gv0:
            break
        if j == max_iter:
            raise IterationError(
                f"no convergence in {max_iter} steps (gauge_V = {V.gauge(y):.3g})", trace()
            )
        cons, labels = active_constraints(U, gauges, schedule, j)
        x = R @ y
        r = np.array([w(x) / b for w, b in cons])
        if r.max() <= 1.0 + margin:
            selection.append("min_gauge")
        else:
            res = solver.solve(y, cons, margin)
            if not res.feasible:
                raise IterationError(
                    f"schedule violated at step {j} (t = {res.t:.6g})",
                    trace(), step=j, ratios=dict(zip(labels, res.ratios.tolist())),
                )
            x, r = res.x, res.ratios
            selection.append("constrained")
        ratios.append(dict(zip(labels, r.tolist())))
        y_next = y - hm @ x
        fx = fm @ x
        denom = np.linalg.norm(y_next) + np.linalg.norm(fx)
        consistency.append(float(np.linalg.norm(y_next + fx) / denom) if denom > 0 else 0.0)
        xs.append(x)
        ys.append(y_next)
        y = y_next

    tr = trace()
    return tr, _report(tr, hm, V, g)


def _report(tr: IterationTrace, hm, V, g) -> SolveReport:
    y0 = tr.y_seq[0]
    ny0 = float(np.linalg.norm(y0))
    z = tr.z
    final = float(np.linalg.norm(hm @ z - y0) / ny0) if ny0 > 0 else float(np.linalg.norm(hm @ z))
    tele = 0.0
    for j in range(tr.steps):
        d = np.linalg.norm(y0 - hm @ tr.z_partial[j] - tr.y_seq[j + 1])
        tele = max(tele, float(d / ny0) if ny0 > 0 else float(d))
    gv = [V.gauge(y) for y in tr.y_seq]
    rat = [b / a for a, b in zip(gv, gv[1:]) if a > 1e-300]
    s = np.linalg.svd(g.matrix, compute_uv=False) if g.matrix.size else np.ones(1)
    sel = {k: tr.selection.count(k) for k in ("min_gauge", "constrained")}
    return SolveReport(
        z=z,
        final_residual=final,
        iterations=tr.steps,
        contraction_ratio=max(rat) if rat else 0.0,
        consistency_worst=max(tr.consistency, default=0.0),
        telescoping_worst=tele,
        selections=sel,
        singular_margin=float(s[-1] / s[0]) if s[0] > 0 else 0.0,
    )


def solve_any(
    f: LinearOperator,
    g: LinearOperator,
    U: Gauge,
    system,
    schedule: Schedule,
    y,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    margin: float = DEFAULT_MARGIN,
) -> tuple[IterationTrace, SolveReport]:
    """Solve for arbitrary y by rescaling it to gauge 1/2 in V."""
    y = np.asarray(y, dtype=float)
    V = image_of_ball(g, U)
    gv = V.gauge(y)
    t = 1.0 if gv == 0 else 0.5 / gv
    tr, rep = successive_approximation(f, g, U, system, schedule, t * y, tol, max_iter, margin)
    tr.scale = t
    rep.z = rep.z / t
    hm = f.matrix + g.matrix
    ny = float(np.linalg.norm(y))
    rep.final_residual = float(np.linalg.norm(hm @ rep.z - y) / ny) if ny > 0 else float(np.linalg.norm(hm @ rep.z))
    return tr, rep


FAMILIES = ("y_in_V", "y_in_K", "x_in_U", "x_in_W", "block_in_2W", "preimage", "recursion")
MEMBERSHIP_FAMILIES = FAMILIES[:5]


@dataclass
class CertificateTable:
    rows: list[dict]
    margin: float

    @property
    def worst(self) -> dict:
        out = {f: 0.0 for f in FAMILIES}
        for r in self.rows:
            out[r["family"]] = max(out[r["family"]], r["ratio"])
        return out

    @property
    def violations(self) -> list[dict]:
        return [r for r in self.rows if not r["ratio"] <= 1.0 + self.margin]

    @property
    def passed(self) -> bool:
        return not self.violations

    HEADER = ("family", "p", "j", "k", "l", "value", "bound", "ratio", "pass")

    def csv_rows(self) -> list[list]:
        return [
            [r["family"], r["p"], r["j"], r["k"], r["l"], r["value"], r["bound"], r["ratio"],
             int(r["ratio"] <= 1.0 + self.margin)]
            for r in self.rows
        ]


def certify_trace(
    trace: IterationTrace,
    K,
    V,
    U: Gauge,
    system,
    schedule: Schedule,
    margin: float = DEFAULT_MARGIN,
) -> CertificateTable:
    """Check every displayed membership and identity on a recorded trace.

    Families: ``y_in_V`` gauge_V(y_j) <= 2^-j; ``y_in_K`` y_j in 2^{1-j}K for
    j >= 1; ``x_in_U`` gauge_U(x_j) <= 2^-j; ``x_in_W`` gauge_Wp(x_j) <=
    2^{n_p-j} for j > n_p, j >= 1; ``block_in_2W`` gauge_Wp(x_k+...+x_l) <= 2
    for n_p < k < l; ``preimage`` y_j = g x_j; ``recursion`` y_{j+1} = -f x_j.
    Violations are reported, never raised.
    """
    gauges = _gauges(system)
    rows = []

    def add(family, value, bound, p=None, j=None, k=None, l=None):
        ratio = value / bound if bound > 0 else (0.0 if value == 0 else float("inf"))
        rows.append({"family": family, "p": p, "j": j, "k": k, "l": l,
                     "value": float(value), "bound": float(bound), "ratio": float(ratio)})

    ys, xs = trace.y_seq, trace.x_seq
    J = trace.steps
    ny0 = float(np.linalg.norm(ys[0]))
    floor = 1e-15 * ny0

    for j, y in enumerate(ys):
        add("y_in_V", V.gauge(y), 2.0**-j, j=j)
        if j >= 1:
            gk, res = K.locate(y)
            if res > 1e-9 * (np.linalg.norm(y) + 2.0 ** (1 - j) * K.radius) + floor:
                gk = float("inf")
            add("y_in_K", gk, 2.0 ** (1 - j), j=j)
    for j in range(J):
        x = xs[j]
        add("x_in_U", float(U(x)), 2.0**-j, j=j)
        for p, (w, n) in enumerate(zip(gauges, schedule.entries), start=1):
            if j >= 1 and j > n:
                add("x_in_W", float(w(x)), 2.0 ** (n - j), p=p, j=j)
        gx = trace.g @ x
        err = np.linalg.norm(ys[j] - gx)
        add("preimage", err, IDENTITY_RTOL * (np.linalg.norm(ys[j]) + np.linalg.norm(gx)) + floor, j=j)
        fx = trace.f @ x
        err = np.linalg.norm(ys[j + 1] + fx)
        add("recursion", err, IDENTITY_RTOL * (np.linalg.norm(ys[j + 1]) + np.linalg.norm(fx)) + floor, j=j)

    prefix = np.vstack([np.zeros((1, xs.shape[1])), np.cumsum(xs, axis=0)]) if J else None
    for p, (w, n) in enumerate(zip(gauges, schedule.entries), start=1):
        start = max(n, 0) + 1
        for k in range(start, J):
            sums = prefix[k + 2 : J + 1] - prefix[k]
            if sums.shape[0] == 0:
                continue
            vals = w(sums)
            i = int(np.argmax(vals))
            add("block_in_2W", float(vals[i]), 2.0, p=p, k=k, l=k + 1 + i)
    return CertificateTable(rows, margin)


def codimension_report(f: LinearOperator, g: LinearOperator, net) -> dict:
    """Rank-based codimension of ``f + g`` against the net-size bound.

    ``net`` may be a net, a reduction chain, or a plain centre count.
    """
    h = f.matrix + g.matrix
    rank = numerical_rank(h)
    rank_codim = h.shape[0] - rank
    if isinstance(net, (int, np.integer)):
        bound = int(net)
    elif hasattr(net, "net_size"):
        bound = net.net_size
    else:
        bound = net.size
    out = {"rank_h": rank, "rank_codim": rank_codim, "net_bound": bound, "consistent": rank_codim <= bound}
    basis = getattr(net, "defect_basis", None)
    if basis is not None:
        # image of h together with the defect subspace should fill F
        out["spans_codomain"] = numerical_rank(np.hstack([h, basis])) == h.shape[0]
    return out
