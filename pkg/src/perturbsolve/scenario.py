"""Scenario files: schema, loading, and named instance generators."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ScenarioError
from .graded_space import Gauge, GradedSpace, graded_sequence_system
from .operators import LinearOperator

_NUM = {"type": "number"}
_NUMS = {"type": "array", "items": _NUM}

GAUGE_SCHEMA = {
    "type": "object",
    "required": ["dim"],
    "properties": {
        "dim": {"type": "integer", "minimum": 1},
        "chol": _NUMS,
        "diag": _NUMS,
        "identity": {"type": "boolean"},
    },
    "oneOf": [
        {"required": ["chol"]},
        {"required": ["diag"]},
        {"required": ["identity"]},
    ],
    "additionalProperties": False,
}

SYSTEM_SCHEMA = {
    "type": "object",
    "required": ["rule"],
    "properties": {
        "rule": {"enum": ["explicit", "banach", "graded_sequence"]},
        "gauges": {"type": "array", "items": GAUGE_SCHEMA, "minItems": 1},
        "P": {"type": "integer", "minimum": 1},
        "base": {"type": "number", "exclusiveMinimum": 0},
    },
    "additionalProperties": False,
}

OPERATOR_SCHEMA = {
    "type": "object",
    "properties": {
        "rows": {"type": "integer", "minimum": 0},
        "cols": {"type": "integer", "minimum": 1},
        "data": _NUMS,
        "preset": {"enum": ["identity", "scaled_identity", "diag", "zero"]},
        "dim": {"type": "integer", "minimum": 1},
        "c": _NUM,
        "values": _NUMS,
    },
    "oneOf": [
        {"required": ["rows", "cols", "data"], "not": {"required": ["preset"]}},
        {"required": ["preset"]},
    ],
    "additionalProperties": False,
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "perturbsolve scenario",
    "type": "object",
    "required": ["name", "spaces", "operators", "target", "seeds"],
    "properties": {
        "name": {"type": "string"},
        "spaces": {
            "type": "object",
            "required": ["E", "F"],
            "properties": {
                "E": {
                    "type": "object",
                    "required": ["dim", "U", "system"],
                    "properties": {
                        "dim": {"type": "integer", "minimum": 1},
                        "U": GAUGE_SCHEMA,
                        "system": SYSTEM_SCHEMA,
                        "labels": {"type": "array", "items": {"type": "string"}},
                    },
                    "additionalProperties": False,
                },
                "F": {
                    "type": "object",
                    "required": ["dim"],
                    "properties": {"dim": {"type": "integer", "minimum": 1}},
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "operators": {
            "type": "object",
            "required": ["f", "g"],
            "properties": {"f": OPERATOR_SCHEMA, "g": OPERATOR_SCHEMA},
            "additionalProperties": False,
        },
        "target": {
            "type": "object",
            "properties": {
                "y": _NUMS,
                "random": {
                    "type": "object",
                    "required": ["norm"],
                    "properties": {"norm": {"type": "number", "minimum": 0}},
                    "additionalProperties": False,
                },
            },
            "oneOf": [{"required": ["y"]}, {"required": ["random"]}],
            "additionalProperties": False,
        },
        "tolerances": {
            "type": "object",
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "margin": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "seeds": {
            "type": "object",
            "required": ["net", "verify", "schedule", "target"],
            "properties": {k: {"type": "integer", "minimum": 0} for k in ("net", "verify", "schedule", "target")},
            "additionalProperties": False,
        },
        "limits": {
            "type": "object",
            "properties": {
                "max_iter": {"type": "integer", "minimum": 1},
                "reduction_rounds": {"type": "integer", "minimum": 1},
                "allow_reduction": {"type": "boolean"},
                "sampler_budget": {"type": "integer", "minimum": 100},
                "verify_trials": {"type": "integer", "minimum": 1},
                "p_max": {"type": ["integer", "null"], "minimum": 1},
            },
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string"}},
            "additionalProperties": False,
        },
        "meta": {"type": "object"},
    },
    "additionalProperties": False,
}

DEFAULTS = {
    "tolerances": {"tol": 1e-10, "margin": 1e-6},
    "limits": {
        "max_iter": 200,
        "reduction_rounds": 3,
        "allow_reduction": True,
        "sampler_budget": 40000,
        "verify_trials": 4000,
        "p_max": None,
    },
    "output": {"dir": "out"},
}


@dataclass
class Problem:
    """A validated scenario turned into concrete objects."""

    name: str
    space: GradedSpace
    U: Gauge
    f: LinearOperator
    g: LinearOperator
    y: np.ndarray
    tol: float
    margin: float
    seeds: dict
    limits: dict
    out_dir: str
    raw: dict


def _path(error: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in error.absolute_path) or "<root>"


def validate(data: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        raise ScenarioError(e.message, _path(e))


def _gauge(spec: dict, where: str) -> Gauge:
    dim = spec["dim"]
    try:
        if "chol" in spec:
            return Gauge.from_dict(spec)
        if "diag" in spec:
            if len(spec["diag"]) != dim:
                raise ScenarioError(f"diag needs {dim} entries", where + ".diag")
            return Gauge.diagonal(spec["diag"])
        return Gauge.euclidean(dim)
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(str(exc), where) from None


def _operator(spec: dict, rows: int, cols: int, where: str) -> LinearOperator:
    preset = spec.get("preset")
    if preset is None:
        try:
            op = LinearOperator.from_dict(spec)
        except ValueError as exc:
            raise ScenarioError(str(exc), where + ".data") from None
    elif preset in ("identity", "scaled_identity"):
        c = spec.get("c", 1.0) if preset == "scaled_identity" else 1.0
        op = LinearOperator(c * np.eye(rows, cols))
    elif preset == "diag":
        vals = spec.get("values")
        if vals is None or len(vals) != min(rows, cols):
            raise ScenarioError(f"diag preset needs {min(rows, cols)} values", where + ".values")
        m = np.zeros((rows, cols))
        m[np.diag_indices(min(rows, cols))] = vals
        op = LinearOperator(m)
    else:
        op = LinearOperator(np.zeros((rows, cols)))
    if op.shape != (rows, cols):
        raise ScenarioError(f"shape {op.shape} does not match spaces ({rows}, {cols})", where)
    return op


def _system(spec: dict, U: Gauge, dim: int, where: str) -> list[Gauge]:
    rule = spec["rule"]
    if rule == "explicit":
        if "gauges" not in spec:
            raise ScenarioError("explicit rule needs gauges", where + ".gauges")
        gauges = [_gauge(s, f"{where}.gauges.{i}") for i, s in enumerate(spec["gauges"])]
        for i, gg in enumerate(gauges):
            if gg.dim != dim:
                raise ScenarioError(f"gauge dim {gg.dim} != {dim}", f"{where}.gauges.{i}.dim")
        return gauges
    count = spec.get("P", 3)
    if rule == "banach":
        return [U] * count
    return graded_sequence_system(dim, count, spec.get("base", 2.0))


def build(data: dict) -> Problem:
    """Validate a scenario document and construct its objects."""
    validate(data)
    merged = {k: {**v, **data.get(k, {})} for k, v in DEFAULTS.items()}
    E, F = data["spaces"]["E"], data["spaces"]["F"]
    n, m = E["dim"], F["dim"]
    U = _gauge(E["U"], "spaces.E.U")
    if U.dim != n:
        raise ScenarioError(f"U has dim {U.dim}, space has {n}", "spaces.E.U.dim")
    gauges = _system(E["system"], U, n, "spaces.E.system")
    labels = tuple(E["labels"]) if "labels" in E else None
    try:
        space = GradedSpace(n, tuple(gauges), labels)
    except ValueError as exc:
        raise ScenarioError(str(exc), "spaces.E.system") from None
    f = _operator(data["operators"]["f"], m, n, "operators.f")
    g = _operator(data["operators"]["g"], m, n, "operators.g")
    seeds = dict(data["seeds"])
    tgt = data["target"]
    if "y" in tgt:
        y = np.asarray(tgt["y"], dtype=float)
        if y.shape != (m,):
            raise ScenarioError(f"target needs {m} entries", "target.y")
    else:
        rng = np.random.default_rng(seeds["target"])
        y = rng.standard_normal(m)
        y *= tgt["random"]["norm"] / np.linalg.norm(y)
    return Problem(
        name=data["name"],
        space=space,
        U=U,
        f=f,
        g=g,
        y=y,
        tol=merged["tolerances"]["tol"],
        margin=merged["tolerances"]["margin"],
        seeds=seeds,
        limits=merged["limits"],
        out_dir=merged["output"]["dir"],
        raw=data,
    )


def load(path) -> Problem:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError("file not found", str(path)) from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc}", str(path)) from None
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object", "<root>")
    return build(data)


def dump(data: dict, path) -> None:
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


# --- generators -------------------------------------------------------------

KERNELS = {
    "exp(-|s-t|)": lambda s, t: np.exp(-np.abs(s - t)),
    "exp(-(s-t)^2)": lambda s, t: np.exp(-((s - t) ** 2)),
    "min(s,t)": np.minimum,
    "cos(pi*(s-t))": lambda s, t: np.cos(np.pi * (s - t)),
    "s*t": lambda s, t: s * t,
}


def _explicit(op: np.ndarray) -> dict:
    return LinearOperator(op).to_dict()


def _base(name, n, m, U: Gauge, system: dict, f, g, target, seed=0, meta=None) -> dict:
    return {
        "name": name,
        "spaces": {"E": {"dim": n, "U": U.to_dict(), "system": system}, "F": {"dim": m}},
        "operators": {"f": f, "g": g},
        "target": target,
        "tolerances": dict(DEFAULTS["tolerances"]),
        "seeds": {"net": seed, "verify": seed, "schedule": seed, "target": seed},
        "limits": dict(DEFAULTS["limits"]),
        "output": {"dir": f"out/{name}"},
        "meta": meta or {},
    }


def fredholm_matrix(kernel: str, grid: int, scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre Nystrom matrix of ``k`` on [0, 1], scaled to spectral norm ``scale``."""
    if kernel not in KERNELS:
        raise ScenarioError(f"unknown kernel {kernel!r}; choose from {sorted(KERNELS)}", "kernel")
    x, w = np.polynomial.legendre.leggauss(grid)
    s = 0.5 * (x + 1.0)
    w = 0.5 * w
    k = KERNELS[kernel](s[:, None], s[None, :]) * w[None, :]
    return scale * k / np.linalg.norm(k, 2), s


def _banach_identity(dim=2, f_norm=0.25, P=3, seed=0):
    dim = int(dim)
    y = np.zeros(dim)
    y[0] = 0.5
    return _base(
        "banach_identity", dim, dim, Gauge.euclidean(dim), {"rule": "banach", "P": int(P)},
        {"preset": "scaled_identity", "dim": dim, "c": -float(f_norm)},
        {"preset": "identity", "dim": dim},
        {"y": y.tolist()}, int(seed),
        {"preset": "banach_identity", "dim": dim, "f_norm": float(f_norm)},
    )


def _fredholm(kernel="exp(-|s-t|)", grid=32, scale=0.45, P=3, seed=0):
    grid = int(grid)
    f, s = fredholm_matrix(kernel, grid, float(scale))
    y = np.sin(np.pi * s) + s
    return _base(
        "fredholm_second_kind", grid, grid, Gauge.euclidean(grid), {"rule": "banach", "P": int(P)},
        _explicit(f), {"preset": "identity", "dim": grid},
        {"y": y.tolist()}, int(seed),
        {"preset": "fredholm_second_kind", "kernel": kernel, "grid": grid, "scale": float(scale),
         "nodes": s.tolist()},
    )


def _graded_sequence(dim=8, base=2.0, P=4, factor=0.4, seed=0):
    dim = int(dim)
    k = np.arange(1, dim + 1, dtype=float)
    return _base(
        "graded_sequence", dim, dim, Gauge.euclidean(dim),
        {"rule": "graded_sequence", "base": float(base), "P": int(P)},
        {"preset": "diag", "values": (-float(factor) / k**2).tolist()},
        {"preset": "identity", "dim": dim},
        {"random": {"norm": 1.0}}, int(seed),
        {"preset": "graded_sequence", "dim": dim, "base": float(base), "P": int(P), "factor": float(factor)},
    )


def random_dense_operators(dim: int, factor: float, seed: int, kernel_dim: int = 0, decay: float = 0.25):
    """Random (f, g, U) with containment factor exactly ``factor``.

    g is a well-conditioned m x (m + kernel_dim) matrix and U a random
    ellipsoid; f is built so that the whitened image of U has singular
    values ``factor * decay**i``.
    """
    rng = np.random.default_rng(seed)
    m, n = dim, dim + kernel_dim
    g = np.hstack([np.eye(m) + 0.3 * rng.standard_normal((m, m)) / math.sqrt(m),
                   0.5 * rng.standard_normal((m, kernel_dim))])
    b = rng.standard_normal((n, n))
    U = Gauge(np.eye(n) + 0.5 * b @ b.T / n)
    # square factor of V = g(U): L L^T = g Q_U^{-1} g^T
    lv = np.linalg.cholesky(g @ np.linalg.solve(U.quad, g.T))
    o1, _ = np.linalg.qr(rng.standard_normal((m, m)))
    o2, _ = np.linalg.qr(rng.standard_normal((n, n)))
    r = min(m, n)
    a = o1[:, :r] @ np.diag(factor * decay ** np.arange(r)) @ o2[:, :r].T
    w, v = np.linalg.eigh(U.quad)
    q_half = (v * np.sqrt(w)) @ v.T
    f = lv @ a @ q_half
    return LinearOperator(f), LinearOperator(g), U


def _random_dense(dim=4, factor=0.4, seed=0, kernel_dim=0, P=3, decay=0.25):
    dim, seed, kernel_dim = int(dim), int(seed), int(kernel_dim)
    f, g, U = random_dense_operators(dim, float(factor), seed, kernel_dim, float(decay))
    n = dim + kernel_dim
    return _base(
        f"random_dense_{seed}", n, dim, U, {"rule": "graded_sequence", "base": 2.0, "P": int(P)},
        f.to_dict(), g.to_dict(), {"random": {"norm": 1.0}}, seed,
        {"preset": "random_dense", "dim": dim, "factor": float(factor), "kernel_dim": kernel_dim,
         "decay": float(decay)},
    )


PRESETS = {
    "banach_identity": _banach_identity,
    "fredholm_second_kind": _fredholm,
    "graded_sequence": _graded_sequence,
    "random_dense": _random_dense,
}


def generate_instance(preset: str, **params) -> dict:
    if preset not in PRESETS:
        raise ScenarioError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}", "preset")
    try:
        data = PRESETS[preset](**params)
    except TypeError as exc:
        raise ScenarioError(f"invalid params: {exc}", "params") from None
    except ValueError as exc:
        raise ScenarioError(f"invalid params: {exc}", "params") from None
    validate(data)
    return data
