"""End-to-end run of a scenario: reduce, schedule, iterate, certify, report."""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .covering import ReductionChain, reduce_until
from .errors import (
    CoverError,
    HypothesisError,
    IterationError,
    NotOntoError,
    PipelineError,
    PreimageError,
    ScheduleError,
)
from .operators import LinearOperator, containment_factor, image_of_ball
from .scenario import Problem
from .solver import (
    ENTRY_SLACK,
    CertificateTable,
    IterationTrace,
    Schedule,
    SolveReport,
    certify_trace,
    codimension_report,
    compute_schedule,
    solve_any,
)

EXIT_OK, EXIT_SCHEMA, EXIT_CERTIFICATE, EXIT_PIPELINE = 0, 1, 2, 3
ENTRY_LIMIT = 0.5 * (1.0 - ENTRY_SLACK)

_STAGE_ERRORS = (CoverError, HypothesisError, IterationError, NotOntoError, PreimageError, ScheduleError, ValueError)


@dataclass
class RunResult:
    problem: Problem
    timings: dict = field(default_factory=dict)
    factor: float | None = None
    normalized: list | None = None
    provenance: list | None = None
    chain: ReductionChain | None = None
    schedule: Schedule | None = None
    trace: IterationTrace | None = None
    report: SolveReport | None = None
    certificates: CertificateTable | None = None
    codim: dict | None = None
    full_residual: float | None = None
    error: PipelineError | None = None

    @property
    def exit_code(self) -> int:
        if self.error is not None:
            return EXIT_PIPELINE
        if self.certificates is not None and not self.certificates.passed:
            return EXIT_CERTIFICATE
        return EXIT_OK

    def to_dict(self) -> dict:
        out = {
            "scenario": self.problem.name,
            "exit_code": self.exit_code,
            "stage_timings": self.timings,
            "containment_factor": self.factor,
            "entry_limit": ENTRY_LIMIT,
            "hypothesis_slack": None if self.factor is None else ENTRY_LIMIT - self.factor,
            "normalization": self.provenance,
        }
        if self.chain is not None:
            out["reduction"] = self.chain.to_dict()
        if self.schedule is not None:
            out["schedule"] = self.schedule.to_dict()
        if self.report is not None:
            rep = self.report.to_dict()
            rep["quotient_residual"] = rep.pop("final_residual")
            rep["final_residual"] = self.full_residual
            out["solve"] = rep
        if self.codim is not None:
            out["codimension"] = self.codim
        if self.certificates is not None:
            out["certificates"] = {"passed": self.certificates.passed, "worst": self.certificates.worst,
                                   "violations": len(self.certificates.violations)}
        if self.error is not None:
            out["error"] = {"stage": self.error.stage, "message": str(self.error), **_jsonable(self.error.detail)}
        return out


def _jsonable(d: dict) -> dict:
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}


class _Stage:
    def __init__(self, result: RunResult, name: str):
        self.result, self.name = result, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, exc_type, exc, tb):
        self.result.timings[self.name] = time.perf_counter() - self.t0
        if exc is not None and isinstance(exc, _STAGE_ERRORS) and not isinstance(exc, PipelineError):
            detail = {}
            for attr in ("factor", "radius", "p", "worst_ratio", "step", "ratios"):
                if getattr(exc, attr, None) is not None:
                    detail[attr] = getattr(exc, attr)
            raise PipelineError(self.name, str(exc), detail) from exc
        return False


def run(problem: Problem, until: str = "certify") -> RunResult:
    """Run the pipeline up to and including stage ``until``.

    Stages: normalize, hypothesis, reduce, schedule, iterate, certify.
    Pipeline failures are captured on the result rather than raised.
    """
    res = RunResult(problem)
    try:
        _run(problem, res, until)
    except PipelineError as exc:
        res.error = exc
    return res


def _run(pb: Problem, res: RunResult, until: str) -> None:
    lim = pb.limits
    with _Stage(res, "normalize"):
        space = pb.space.normalized()
        res.normalized = list(space.system)
        res.provenance = [list(p) for p in space.provenance]

    with _Stage(res, "hypothesis"):
        res.factor = containment_factor(image_of_ball(pb.f, pb.U), image_of_ball(pb.g, pb.U))
        if res.factor > ENTRY_LIMIT and not lim["allow_reduction"]:
            raise PipelineError(
                "hypothesis",
                f"containment factor {res.factor:.6g} exceeds {ENTRY_LIMIT} and reduction is disabled",
                {"factor": res.factor},
            )

    with _Stage(res, "reduce"):
        res.chain = reduce_until(
            pb.f, pb.g, pb.U, ENTRY_LIMIT, lim["reduction_rounds"],
            lim["sampler_budget"], pb.seeds["net"], lim["verify_trials"],
        )
    if until == "reduce":
        res.codim = codimension_report(pb.f, pb.g, res.chain)
        return

    f_r, g_r = res.chain.induced_f, res.chain.induced_g
    proj = res.chain.projector
    with _Stage(res, "schedule"):
        if g_r.codomain_dim == 0:
            res.schedule = Schedule([], "trivial quotient", [])
        else:
            res.schedule = compute_schedule(
                f_r, g_r, pb.U, space, lim["p_max"], pb.margin, seed=pb.seeds["schedule"],
            )
    if until == "schedule":
        return

    with _Stage(res, "iterate"):
        if g_r.codomain_dim == 0:
            raise PipelineError("iterate", "quotient is trivial; nothing to iterate")
        res.trace, res.report = solve_any(
            f_r, g_r, pb.U, space, res.schedule, proj @ pb.y, pb.tol, lim["max_iter"], pb.margin,
        )
        h = pb.f.matrix + pb.g.matrix
        ny = float(np.linalg.norm(pb.y))
        res.full_residual = float(np.linalg.norm(h @ res.report.z - pb.y) / (ny or 1.0))
        res.codim = codimension_report(pb.f, pb.g, res.chain)
        res.report.codim_bound = res.codim["net_bound"]
        res.report.rank_codim = res.codim["rank_codim"]
    if until == "iterate":
        return

    with _Stage(res, "certify"):
        res.certificates = certify_trace(
            res.trace, image_of_ball(f_r, pb.U), image_of_ball(g_r, pb.U), pb.U, space,
            res.schedule, pb.margin,
        )
        res.report.certificate_worst = res.certificates.worst


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_artifacts(res: RunResult, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json"}
    if res.trace is not None:
        header, rows = res.trace.table()
        paths["trace_table"] = out / "trace.csv"
        paths["trace_table"].write_text(csv_text(header, rows))
        paths["trace"] = out / "trace.json"
        paths["trace"].write_text(json.dumps(res.trace.to_dict()) + "\n")
    if res.certificates is not None:
        paths["certificates"] = out / "certificates.csv"
        paths["certificates"].write_text(csv_text(CertificateTable.HEADER, res.certificates.csv_rows()))
    paths["report"].write_text(json.dumps(res.to_dict(), indent=2, default=_default) + "\n")
    return paths


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def certify_file(trace_path, margin: float = 1e-6) -> CertificateTable:
    """Recompute the certificate table from a saved ``trace.json``."""
    tr = IterationTrace.from_dict(json.loads(Path(trace_path).read_text()))
    f, g = LinearOperator(tr.f), LinearOperator(tr.g)
    return certify_trace(tr, image_of_ball(f, tr.U), image_of_ball(g, tr.U), tr.U, tr.system, tr.schedule, margin)
