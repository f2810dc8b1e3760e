"""Batch front door: ``curvlab <command> --spec FILE [--seed N] [--threads N] [--out DIR]``.

Run-specs are JSON files validated against a schema before anything runs.
Exit codes: 0 all checks pass, 1 a check failed, 2 invalid input, 3 a theorem
hypothesis is violated.

CSV columns per command:
  weight-eval       index, point, value
  identity-suite    identity, passed, failed
  oberlin-scan      stage, evals, sup
  inequality-check  factor, value, std_error, exponent   (first row: lhs)
  radon-probe       eps, value, gap
  exponents         field, value
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from fractions import Fraction
from pathlib import Path
from typing import Any

import jsonschema

from .integrate import IntegrateInputError, Region, radon_ladder
from .linalg import LinalgInputError
from .poly import DegreeOverflowError, PolyParseError, parse_poly
from .verify import (
    HypothesisError,
    VerifyInputError,
    check_oberlin,
    check_theorem1,
    check_theorem2,
    exponents,
    fingerprint,
    greenleaf_seeger_exponents,
    identity_suite,
    instance_theorem1,
    instance_theorem2,
    load_frozen,
)
from .weights import ConeMap, PhaseSystem, WeightFunctional, WeightInputError

SCHEMA_VERSION = 1
COMMANDS = ("weight-eval", "identity-suite", "oberlin-scan", "inequality-check", "radon-probe", "exponents")

_number = {"oneOf": [{"type": "number"}, {"type": "string", "pattern": r"^\s*-?\d+(\s*/\s*\d+)?\s*$"}]}
_poly = {"type": "string", "minLength": 1}
_phase = {
    "type": "object",
    "required": ["type", "d_l", "d_r", "rho"],
    "properties": {
        "type": {"const": "PhaseSystem"},
        "d_l": {"type": "integer", "minimum": 1},
        "d_r": {"type": "integer", "minimum": 1},
        "rho": _poly,
        "phi": {"type": "array", "items": _poly},
    },
    "additionalProperties": False,
}
_cone = {
    "type": "object",
    "required": ["type", "d", "Phi"],
    "properties": {
        "type": {"const": "ConeMap"},
        "d": {"type": "integer", "minimum": 1},
        "Phi": {"type": "array", "items": _poly, "minItems": 1},
        "phi": {"type": "array", "items": _poly},
    },
    "additionalProperties": False,
}
_region = {
    "type": "object",
    "required": ["boxes"],
    "properties": {
        "boxes": {"type": "array", "items": {
            "type": "array", "minItems": 2, "maxItems": 2,
            "items": {"type": "array", "items": {"type": "number"}, "minItems": 1}}},
        "constraints": {"type": "array", "items": _poly},
    },
    "additionalProperties": False,
}
_weight = {
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"type": "string"}, "params": {"type": "object"}},
}

RUNSPEC_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "seed": {"type": "integer", "minimum": 0},
        "instance": {"oneOf": [_phase, _cone]},
        "region": _region,
        "weight": {"oneOf": [_weight, {"enum": ["W1", "W2", "W3"]}, {"type": "number"}]},
        "points": {"type": "array", "items": {"type": "array", "items": _number}},
        "exact": {"type": "boolean"},
        "trials": {"type": "integer", "minimum": 1},
        "only": {"type": "array", "items": {"type": "string"}},
        "s": _number,
        "budget": {"type": "integer", "minimum": 1},
        "cond_cap": {"type": "number", "exclusiveMinimum": 1},
        "expect_divergent": {"type": "boolean"},
        "theorem": {"enum": [1, 2]},
        "f": {"oneOf": [_poly, {"type": "number"}]},
        "g": {"oneOf": [_poly, {"type": "number"}]},
        "ratio_cap": {"type": "number", "exclusiveMinimum": 0},
        "frozen": {"type": "string"},
        "frozen_tolerance": {"type": "number", "exclusiveMinimum": 0},
        "resolution": {"type": "number", "exclusiveMinimum": 0},
        "n_slices": {"type": "integer", "minimum": 2},
        "x": {"type": "array", "items": _number, "minItems": 1},
        "eps": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "method": {"enum": ["sections", "mc"]},
        "expected": {"type": "number"},
        "rel_tol": {"type": "number", "exclusiveMinimum": 0},
        "d_l": {"type": "integer", "minimum": 1},
        "k": {"type": "integer", "minimum": 0},
        "m": {"type": "integer", "minimum": 0},
        "gs_d": {"type": "integer", "minimum": 2},
    },
    "additionalProperties": False,
}

_REQUIRED = {
    "weight-eval": ["instance", "weight", "points"],
    "identity-suite": [],
    "oberlin-scan": ["instance", "weight", "region"],
    "inequality-check": ["theorem"],
    "radon-probe": ["instance", "region", "x", "eps"],
    "exponents": ["d_l"],
}


class SpecError(ValueError):
    """Invalid run-spec; ``field`` points at the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def validate_spec(spec: Any, command: str) -> dict:
    try:
        jsonschema.validate(spec, RUNSPEC_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SpecError(where, exc.message) from None
    if "command" in spec and spec["command"] != command:
        raise SpecError("command", f"spec is for {spec['command']!r}, invoked as {command!r}")
    for key in _REQUIRED[command]:
        if key not in spec:
            raise SpecError(key, f"required for {command}")
    return spec


def _num(v):
    if isinstance(v, str):
        return Fraction(v.replace(" ", ""))
    return v


def _instance(spec: dict):
    data = spec["instance"]
    try:
        return PhaseSystem.from_dict(data) if data["type"] == "PhaseSystem" else ConeMap.from_dict(data)
    except PolyParseError as exc:
        raise SpecError("instance", str(exc)) from None


def _region(spec: dict) -> Region:
    try:
        return Region.from_dict(spec["region"])
    except (PolyParseError, IntegrateInputError) as exc:
        raise SpecError("region", str(exc)) from None


def _side_function(text, names: list[str], field: str):
    if text is None or isinstance(text, (int, float)):
        return text
    try:
        return parse_poly(text, nvars=len(names), names=names)
    except PolyParseError as exc:
        raise SpecError(field, str(exc)) from None


def _float(v):
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


# --- commands ------------------------------------------------------------------------------

def cmd_weight_eval(spec, seed, threads):
    inst = _instance(spec)
    w = spec["weight"]
    if not isinstance(w, dict):
        raise SpecError("weight", "weight-eval needs a weight object {kind, params}")
    wf = WeightFunctional.from_dict(w)
    exact = spec.get("exact")
    rows, values = [], []
    for i, p in enumerate(spec["points"]):
        pt = [_num(v) for v in p]
        val = wf.evaluate(inst, pt, exact)
        sval = str(val) if isinstance(val, Fraction) else repr(float(val))
        values.append({"point": [str(v) for v in pt], "value": sval})
        rows.append([i, " ".join(str(v) for v in pt), sval])
    result = {"weight": wf.to_dict(), "instance": inst.to_dict(), "values": values}
    return result, ["index", "point", "value"], rows, True


def cmd_identity_suite(spec, seed, threads):
    summary = identity_suite(seed, spec.get("trials", 20), spec.get("exact", True), only=spec.get("only"),
                             threads=threads)
    rows = [[k, v["passed"], v["failed"]] for k, v in summary.counts.items()]
    return summary.to_dict(), ["identity", "passed", "failed"], rows, summary.passed


def _oberlin_weight(w):
    if isinstance(w, dict):
        return WeightFunctional.from_dict(w)
    return w


def cmd_oberlin_scan(spec, seed, threads):
    cm = _instance(spec)
    if not isinstance(cm, ConeMap):
        raise SpecError("instance", "oberlin-scan needs a ConeMap")
    kw = {}
    if "cond_cap" in spec:
        kw["cond_cap"] = spec["cond_cap"]
    s = spec.get("s")
    rep = check_oberlin(cm, _oberlin_weight(spec["weight"]), _region(spec), s=None if s is None else _num(s),
                        budget=spec.get("budget", 400), seed=seed, resolution=spec.get("resolution", 1e-3),
                        ratio_cap=spec.get("ratio_cap", math.inf), **kw)
    result = rep.to_dict()
    result["worst_Q"] = rep.config["worst_Q"]
    result["divergent"] = rep.config["divergent"]
    result["trace"] = rep.config["trace"]
    if "expect_divergent" in spec:
        ok = rep.config["divergent"] == spec["expect_divergent"]
    else:
        ok = rep.passed
    result["pass"] = ok
    rows = [[t["stage"], t.get("evals", ""), repr(float(t["sup"]))] for t in rep.config["trace"]]
    return result, ["stage", "evals", "sup"], rows, ok


def _known_instance(ps: PhaseSystem, E: Region) -> str | None:
    for key, build in (("theorem1_xy", instance_theorem1), ("theorem2_cubic", instance_theorem2)):
        p0, e0 = build()
        if p0.to_dict() == ps.to_dict() and e0.to_dict() == E.to_dict():
            return key
    return None


def cmd_inequality_check(spec, seed, threads):
    which = spec["theorem"]
    if "instance" in spec:
        ps = _instance(spec)
        if not isinstance(ps, PhaseSystem):
            raise SpecError("instance", "inequality-check needs a PhaseSystem")
        if "region" not in spec:
            raise SpecError("region", "required when an instance is given")
        E = _region(spec)
    else:
        ps, E = (instance_theorem1 if which == 1 else instance_theorem2)()
    f = _side_function(spec.get("f"), [f"x{i + 1}" for i in range(ps.d_l)], "f")
    g = _side_function(spec.get("g"), [f"y{i + 1}" for i in range(ps.d_r)], "g")
    check = check_theorem1 if which == 1 else check_theorem2
    kw = {k: spec[k] for k in ("resolution", "n_slices") if k in spec}
    rep = check(ps, E, f, g, budget=spec.get("budget", 200_000), seed=seed,
                ratio_cap=spec.get("ratio_cap", math.inf), threads=threads, **kw)
    result = rep.to_dict()
    ok = rep.passed
    key = spec.get("frozen") or (_known_instance(ps, E) if f is None and g is None else None)
    if key:
        frozen = load_frozen()
        if key not in frozen:
            raise SpecError("frozen", f"no frozen ratio named {key!r}")
        tol = spec.get("frozen_tolerance", 0.10)
        ref = frozen[key]["ratio"]
        within = abs(rep.ratio / ref - 1) <= tol
        result["frozen"] = {"name": key, "ratio": ref, "tolerance": tol, "within": within}
        ok = ok and within
        result["pass"] = ok
    rows = [["lhs", repr(rep.lhs.value), repr(rep.lhs.std_error), "1"]]
    rows += [[fa.name, repr(float(fa.value)), repr(fa.std_error), str(fa.exponent)] for fa in rep.rhs_factors]
    rows.append(["ratio", repr(rep.ratio), repr(rep.ratio_std_error()), ""])
    return result, ["factor", "value", "std_error", "exponent"], rows, ok


def cmd_radon_probe(spec, seed, threads):
    ps = _instance(spec)
    if not isinstance(ps, PhaseSystem):
        raise SpecError("instance", "radon-probe needs a PhaseSystem")
    g = _side_function(spec.get("g"), [f"y{i + 1}" for i in range(ps.d_r)], "g")
    x = [float(_num(v)) for v in spec["x"]]
    ladder = radon_ladder(ps, g, x, _region(spec), spec["eps"], method=spec.get("method", "sections"),
                          seed=seed, threads=threads)
    ok = True
    result: dict = {"ladder": ladder}
    if "expected" in spec:
        last = ladder[-1]["value"]
        tol = spec.get("rel_tol", 0.02)
        ok = abs(last - spec["expected"]) <= tol * abs(spec["expected"])
        result["expected"] = spec["expected"]
        result["rel_tol"] = tol
    result["pass"] = ok
    rows = [[r["eps"], repr(r["value"]), "" if r["gap"] is None else repr(r["gap"])] for r in ladder]
    return result, ["eps", "value", "gap"], rows, ok


def cmd_exponents(spec, seed, threads):
    s = spec.get("s")
    ex = exponents(spec["d_l"], spec.get("k", 0), spec.get("m", 0), None if s is None else _num(s))
    inv = ex.invariants()
    result = {"exponents": ex.to_dict(), "invariants": inv}
    if "gs_d" in spec:
        result["greenleaf_seeger"] = {k: str(v) for k, v in greenleaf_seeger_exponents(spec["gs_d"]).items()}
    ok = all(inv.values())
    result["pass"] = ok
    rows = [[k, "" if v is None else str(v)] for k, v in ex.to_dict().items()]
    return result, ["field", "value"], rows, ok


HANDLERS = {
    "weight-eval": cmd_weight_eval,
    "identity-suite": cmd_identity_suite,
    "oberlin-scan": cmd_oberlin_scan,
    "inequality-check": cmd_inequality_check,
    "radon-probe": cmd_radon_probe,
    "exponents": cmd_exponents,
}


# --- driver --------------------------------------------------------------------------------

def _dump_json(obj) -> str:
    def default(v):
        if isinstance(v, Fraction):
            return str(v)
        if hasattr(v, "item"):
            return v.item()
        raise TypeError(f"not serializable: {type(v).__name__}")

    return json.dumps(_sanitize(obj), indent=2, sort_keys=True, default=default) + "\n"


def _sanitize(obj):
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return _sanitize(obj.item())
    return obj


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def run(command: str, spec: dict, seed: int | None = None, threads: int | None = None,
        out: str | os.PathLike = ".") -> int:
    """Execute one run-spec; writes <out>/<command>.json and .csv and returns the exit code."""
    try:
        spec = validate_spec(spec, command)
        seed = spec.get("seed", 0) if seed is None else seed
        result, header, rows, ok = HANDLERS[command](spec, seed, threads)
    except HypothesisError as exc:
        print(f"curvlab: hypothesis violated: {exc}", file=sys.stderr)
        return 3
    except SpecError as exc:
        print(f"curvlab: invalid spec at {exc.field}: {exc}", file=sys.stderr)
        return 2
    except (PolyParseError, WeightInputError, IntegrateInputError, VerifyInputError, LinalgInputError,
            DegreeOverflowError, ValueError) as exc:
        print(f"curvlab: invalid input: {exc}", file=sys.stderr)
        return 2
    report = {
        "schema": SCHEMA_VERSION,
        "command": command,
        "seed": seed,
        "spec_fingerprint": fingerprint(spec),
        "pass": bool(ok),
        "result": result,
    }
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / f"{command}.json").write_text(_dump_json(report))
    (outdir / f"{command}.csv").write_text(_csv_text(header, rows))
    print(f"curvlab {command}: {'PASS' if ok else 'FAIL'} -> {outdir / (command + '.json')}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="curvlab", description="Curvature weights and sublevel-set inequality checks.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--spec", help="JSON run-spec (omit for an empty spec)")
    p.add_argument("--seed", type=int, default=None, help="overrides the spec's seed")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $CURVLAB_THREADS or 1)")
    p.add_argument("--out", default=".", help="directory for <command>.json and <command>.csv")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    spec: Any = {}
    if args.spec:
        try:
            spec = json.loads(Path(args.spec).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"curvlab: invalid spec at <file>: {exc}", file=sys.stderr)
            return 2
    if args.threads is not None and args.threads < 1:
        print("curvlab: invalid input: --threads must be >= 1", file=sys.stderr)
        return 2
    return run(args.command, spec, args.seed, args.threads, args.out)


if __name__ == "__main__":
    sys.exit(main())
