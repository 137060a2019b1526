"""Command line front end.

    perturbsolve solve <scenario> [--tol T] [--max-iter N] [--seed S] [--out-dir D] [--margin M]
    perturbsolve net <scenario>
    perturbsolve schedule <scenario>
    perturbsolve certify <trace.json>
    perturbsolve generate <preset> [key=value ...] [--out FILE]

Exit codes: 0 success, 1 invalid input, 2 certificate violation,
3 pipeline failure (the failing stage is printed).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline, scenario
from .errors import ScenarioError

log = logging.getLogger("perturbsolve")


def _overrides(pb: scenario.Problem, args) -> scenario.Problem:
    if args.tol is not None:
        pb.tol = args.tol
    if args.margin is not None:
        pb.margin = args.margin
    if args.max_iter is not None:
        pb.limits["max_iter"] = args.max_iter
    if args.seed is not None:
        pb.seeds = {k: args.seed for k in pb.seeds}
    if args.out_dir is not None:
        pb.out_dir = args.out_dir
    return pb


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _report_failure(res: pipeline.RunResult) -> None:
    if res.error is not None:
        print(f"error at stage {res.error.stage!r}: {res.error}", file=sys.stderr)
    elif res.certificates is not None and not res.certificates.passed:
        worst = max(res.certificates.violations, key=lambda r: r["ratio"])
        print(
            f"certificate violation: {worst['family']} ratio {worst['ratio']:.6g} "
            f"(p={worst['p']}, j={worst['j']}, k={worst['k']}, l={worst['l']})",
            file=sys.stderr,
        )


def cmd_run(args, until: str) -> int:
    pb = _overrides(scenario.load(args.scenario), args)
    res = pipeline.run(pb, until=until)
    out = Path(pb.out_dir)
    if until == "certify":
        paths = pipeline.write_artifacts(res, out)
        summary = {k: str(v) for k, v in paths.items()}
    else:
        out.mkdir(parents=True, exist_ok=True)
        name = "net.json" if until == "reduce" else "schedule.json"
        (out / name).write_text(json.dumps(res.to_dict(), indent=2, default=pipeline._default) + "\n")
        summary = {until: str(out / name)}
    _report_failure(res)
    if res.report is not None:
        log.info("iterations=%d residual=%.3g contraction=%.3g", res.report.iterations,
                 res.full_residual, res.report.contraction_ratio)
    print(json.dumps({"exit_code": res.exit_code, **summary}))
    return res.exit_code


def cmd_certify(args) -> int:
    try:
        table = pipeline.certify_file(args.trace, args.margin if args.margin is not None else 1e-6)
    except (OSError, KeyError, ValueError) as exc:
        print(f"invalid trace file: {exc}", file=sys.stderr)
        return pipeline.EXIT_SCHEMA
    out = Path(args.out_dir) if args.out_dir else Path(args.trace).parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "certificates.csv").write_text(pipeline.csv_text(table.HEADER, table.csv_rows()))
    print(json.dumps({"passed": table.passed, "worst": table.worst}))
    return pipeline.EXIT_OK if table.passed else pipeline.EXIT_CERTIFICATE


def cmd_generate(args) -> int:
    params = {}
    for item in args.params:
        if "=" not in item:
            raise ScenarioError(f"expected key=value, got {item!r}", "params")
        k, v = item.split("=", 1)
        params[k] = _parse_value(v)
    if args.seed is not None:
        params.setdefault("seed", args.seed)
    data = scenario.generate_instance(args.preset, **params)
    if args.out_dir is not None:
        data["output"]["dir"] = args.out_dir
    text = json.dumps(data, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol", type=float)
    common.add_argument("--max-iter", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--margin", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="perturbsolve", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "net", "schedule"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("scenario")
    p = sub.add_parser("certify", parents=[common])
    p.add_argument("trace")
    p = sub.add_parser("generate", parents=[common])
    p.add_argument("preset", choices=sorted(scenario.PRESETS))
    p.add_argument("params", nargs="*", help="key=value preset parameters")
    p.add_argument("--out", help="write the scenario here instead of stdout")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "solve":
            return cmd_run(args, "certify")
        if args.command == "net":
            return cmd_run(args, "reduce")
        if args.command == "schedule":
            return cmd_run(args, "schedule")
        if args.command == "certify":
            return cmd_certify(args)
        return cmd_generate(args)
    except ScenarioError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return pipeline.EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
