"""Command line front-end: ``flatjet <command> --input instance.json [--out DIR]``.

Exit codes: 0 success, 1 usage, 2 invalid data, 3 numerical failure.
Diagnostics go to standard error only.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Sequence

import jsonschema
import numpy as np

from .calculus import (
    Box,
    JetOracle,
    PolynomialOracle,
    PowerOracle,
    ProductOracle,
    TensorBumpOracle,
    power_jet,
)
from .exceptions import DataError, FlatJetError
from .finiteness import ShapeFieldSpec, finiteness_scan, fuzz_whitney_convexity
from .jets import Jet, Smoothness, WhitneyField, parse_multiindex
from .norms import sampled_norms, whitney_field_norm
from .whitney import DEFAULT_MAX_LEVEL, Extension, whitney_decompose, whitney_extend

__all__ = ["Instance", "parse_instance", "main", "INSTANCE_SCHEMA"]

_NUMBER_LIST = {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 4}
_JET_SCHEMA = {
    "type": "object",
    "required": ["basepoint", "degree"],
    "properties": {
        "basepoint": _NUMBER_LIST,
        "degree": {"type": "integer", "minimum": 0},
        "coeffs": {"type": "object", "additionalProperties": {"type": "number"}},
    },
    "additionalProperties": False,
}

INSTANCE_SCHEMA: dict = {
    "type": "object",
    "required": ["n", "s"],
    "properties": {
        "n": {"type": "integer", "minimum": 1, "maximum": 4},
        "s": {"type": "number", "exclusiveMinimum": 0},
        "points": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["x"],
                "properties": {
                    "x": _NUMBER_LIST,
                    "f": {"type": "number", "minimum": 0},
                    # derivative coefficients keyed by comma-joined multi-indices
                    "jet": {"type": "object", "additionalProperties": {"type": "number"}},
                },
                "additionalProperties": False,
            },
        },
        "bound_box": {
            "type": "object",
            "required": ["lo", "hi"],
            "properties": {"lo": _NUMBER_LIST, "hi": _NUMBER_LIST},
            "additionalProperties": False,
        },
        "grid": {"type": "integer", "minimum": 2},
        "r": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "eps": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "jet": _JET_SCHEMA,
        "family": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["type", "center"],
                "properties": {
                    "type": {"enum": ["bump", "quadratic", "quadratic_bump"]},
                    "center": _NUMBER_LIST,
                    "radius": {"type": "number", "exclusiveMinimum": 0},
                    "amplitude": {"type": "number", "minimum": 0},
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


@dataclass
class Instance:
    """Validated instance file. ``raw`` is kept so serialisation is the identity."""

    n: int
    s: Smoothness
    raw: dict = field(repr=False)

    @property
    def points(self) -> list[dict]:
        return self.raw.get("points", [])

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.raw))

    def point_array(self) -> np.ndarray:
        if not self.points:
            raise DataError("instance has no points")
        return np.array([p["x"] for p in self.points], dtype=float)

    def values(self) -> np.ndarray:
        return np.array([self._value(i) for i in range(len(self.points))])

    def _value(self, i: int) -> float:
        p = self.points[i]
        jet_value = p.get("jet", {}).get(",".join(["0"] * self.n))
        if "f" in p and jet_value is not None and jet_value != p["f"]:
            raise DataError(f"points[{i}]: f and the jet value disagree")
        value = p.get("f", jet_value)
        if value is None:
            raise DataError(f"points[{i}]: needs f or a jet")
        return float(value)

    def field(self) -> WhitneyField:
        """Whitney field of degree floor(s); value-only points get zero derivatives."""
        k = self.s.floor_s
        jets = []
        for i, p in enumerate(self.points):
            coeffs = {parse_multiindex(key): v for key, v in p.get("jet", {}).items()}
            coeffs[(0,) * self.n] = self._value(i)
            try:
                jets.append(Jet(tuple(p["x"]), k, coeffs))
            except DataError as exc:
                raise DataError(f"points[{i}]: {exc}") from None
        if not jets:
            raise DataError("instance has no points")
        return WhitneyField.from_jets(jets)

    def bound_box(self) -> Box | None:
        bb = self.raw.get("bound_box")
        return None if bb is None else Box(tuple(bb["lo"]), tuple(bb["hi"]))


def parse_instance(data: Any) -> Instance:
    """Validate a decoded instance document."""
    try:
        jsonschema.validate(data, INSTANCE_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise DataError(f"schema violation at {where}: {exc.message}") from None
    n = data["n"]
    for i, p in enumerate(data.get("points", [])):
        if len(p["x"]) != n:
            raise DataError(f"points[{i}].x has dimension {len(p['x'])}, expected {n}")
    xs = [tuple(p["x"]) for p in data.get("points", [])]
    if len(set(xs)) != len(xs):
        raise DataError("points are not distinct")
    bb = data.get("bound_box")
    if bb is not None and not len(bb["lo"]) == len(bb["hi"]) == n:
        raise DataError(f"bound_box must have dimension {n}")
    for i, member in enumerate(data.get("family", [])):
        if len(member["center"]) != n:
            raise DataError(f"family[{i}].center must have dimension {n}")
    return Instance(n, Smoothness.of(data["s"]), data)


def _load_json(path: str) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _csv(X: np.ndarray, values: np.ndarray) -> str:
    buf = io.StringIO()
    n = X.shape[1]
    buf.write(",".join([f"x{j + 1}" for j in range(n)] + ["value"]) + "\n")
    for row, v in zip(X, values):
        buf.write(",".join(f"{c:.17g}" for c in (*row, v)) + "\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# commands; each returns {filename: text}


def _extension(inst: Instance, args) -> Extension:
    eps = inst.raw.get("eps", 0.5)
    return whitney_extend(inst.field(), inst.s, inst.bound_box(), eps=eps, max_level=args.max_level)


def _grid_points(inst: Instance, F: Extension, args) -> np.ndarray:
    box = inst.bound_box()
    if box is None:
        X = inst.point_array()
        box = Box(tuple(X.min(0) - 1.0), tuple(X.max(0) + 1.0))
    return box.grid(args.grid or inst.raw.get("grid", 64))


def cmd_decompose(inst: Instance, args) -> dict[str, str]:
    d = whitney_decompose(inst.point_array(), inst.bound_box(), max_level=args.max_level)
    return {"decomposition.json": _dumps(d.to_list())}


def _jet_match(F: Extension) -> dict:
    worst_abs, worst_rel = 0.0, 0.0
    for P in F.field.jets:
        got = F.jet(np.array(P.basepoint), P.degree).to_array()
        want = P.to_array()
        err = float(np.max(np.abs(got - want)))
        worst_abs = max(worst_abs, err)
        worst_rel = max(worst_rel, err / max(1.0, float(np.max(np.abs(want)))))
    return {"points": len(F.field), "max_abs_error": worst_abs, "max_rel_error": worst_rel}


def cmd_extend(inst: Instance, args) -> dict[str, str]:
    F = _extension(inst, args)
    X = _grid_points(inst, F, args)
    return {"grid.csv": _csv(X, F(X)), "jet_match.json": _dumps(_jet_match(F))}


def cmd_eval_grid(inst: Instance, args) -> dict[str, str]:
    F = _extension(inst, args)
    X = _grid_points(inst, F, args)
    return {"grid.csv": _csv(X, F(X))}


def cmd_eval_jets(inst: Instance, args) -> dict[str, str]:
    F = _extension(inst, args)
    out = [{"point": list(P.basepoint), "jet": F.jet(np.array(P.basepoint), P.degree).to_dict()}
           for P in F.field.jets]
    return {"jets.json": _dumps(out)}


def cmd_norms(inst: Instance, args) -> dict[str, str]:
    F = _extension(inst, args)
    report = sampled_norms(F, F.feature_boxes(), args.grid or inst.raw.get("grid", 64), inst.s)
    out = report.to_dict()
    out["field_norm"] = whitney_field_norm(F.field, inst.s)
    return {"norms.json": _dumps(out)}


def _family(inst: Instance, args) -> list[tuple[str, JetOracle]]:
    members = inst.raw.get("family")
    if not members:
        return [("extension", _extension(inst, args))]
    out = []
    degree = max(2, inst.s.floor_s + 1)
    for m in members:
        c = tuple(m["center"])
        a = m.get("amplitude", 1.0)
        bump = TensorBumpOracle(c, m.get("radius", 1.0), "bump", a)
        # a |x - c|^2
        quad = Jet(c, degree, {tuple(2 * int(i == j) for i in range(inst.n)): 2.0 * a
                               for j in range(inst.n)})
        if m["type"] == "bump":
            out.append(("bump", bump))
        elif m["type"] == "quadratic":
            out.append(("quadratic", PolynomialOracle(quad)))
        else:
            unit = TensorBumpOracle(c, m.get("radius", 1.0), "bump", 1.0)
            out.append(("quadratic_bump", ProductOracle(PolynomialOracle(quad), unit)))
    return out


def _root_box(inst: Instance) -> Box:
    return inst.bound_box() or Box((-1.0,) * inst.n, (1.0,) * inst.n)


def cmd_root(inst: Instance, args) -> dict[str, str]:
    r = args.r if args.r is not None else inst.raw.get("r", 0.5)
    if not 0 < r <= 1:
        raise DataError(f"r must lie in (0, 1], got {r}")
    s = inst.s.s
    grid = args.grid or inst.raw.get("grid", 64)
    rows = []
    for name, F in _family(inst, args):
        box = F.feature_boxes() if isinstance(F, Extension) else _root_box(inst)
        base = sampled_norms(F, box, grid, s)
        root = sampled_norms(PowerOracle(F, r), box, grid, r * s)
        ratio = root.fs / base.fs**r if base.fs > 0 else (0.0 if root.fs == 0 else math.inf)
        rows.append({"member": name, "fs": base.fs, "fs_root": root.fs, "ratio": ratio})
    report = {"r": r, "s": s, "rs": r * s, "grid": grid, "members": rows,
              "max_ratio": max(row["ratio"] for row in rows)}
    return {"root.json": _dumps(report)}


def cmd_fdb(inst_or_jet: Any, args) -> dict[str, str]:
    data = inst_or_jet.get("jet", inst_or_jet) if isinstance(inst_or_jet, dict) else None
    try:
        jsonschema.validate(data, _JET_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise DataError(f"schema violation at {where}: {exc.message}") from None
    P = Jet.from_dict(data)
    if args.h == "identity":
        result = P
    else:
        r = args.r if args.r is not None else inst_or_jet.get("r", 0.5)
        result = power_jet(P, r)
    return {"power_jet.json": _dumps(result.to_dict())}


def cmd_finiteness(inst: Instance, args) -> dict[str, str]:
    report = finiteness_scan(inst.point_array(), inst.values(), inst.s, k=args.k,
                             c_cap=args.c_cap, budget=args.budget)
    return {"finiteness.json": _dumps(report.to_dict())}


def cmd_fuzz(inst: Instance, args) -> dict[str, str]:
    spec = ShapeFieldSpec(inst.point_array(), inst.values(), inst.s)
    witnesses = fuzz_whitney_convexity(spec, args.trials, seed=args.seed)
    failures = sum(bool(w.verify(inst.s)) for w in witnesses)
    worst = max(witnesses, key=lambda w: w.measured_C)
    report = {
        "trials": len(witnesses),
        "seed": args.seed,
        "max_measured_C": worst.measured_C,
        "mean_measured_C": float(np.mean([w.measured_C for w in witnesses])),
        "reverify_failures": failures,
        "worst": worst.to_dict(),
    }
    return {"fuzz.json": _dumps(report)}


COMMANDS: dict[str, Callable] = {
    "decompose": cmd_decompose,
    "extend": cmd_extend,
    "eval-grid": cmd_eval_grid,
    "eval-jets": cmd_eval_jets,
    "norms": cmd_norms,
    "root": cmd_root,
    "fdb": cmd_fdb,
    "finiteness": cmd_finiteness,
    "fuzz-convexity": cmd_fuzz,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flatjet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--input", required=True, metavar="PATH")
        p.add_argument("--out", metavar="DIR", help="write outputs and manifest.json here")
        p.add_argument("--grid", type=int, metavar="N", help="grid points per axis")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--s", type=float, help="override the instance smoothness")
        p.add_argument("--k", type=int, help="subset size cap (finiteness)")
        p.add_argument("--max-level", type=int, default=DEFAULT_MAX_LEVEL)
        p.add_argument("--budget", type=int, default=40, help="bisection iterations")
        p.add_argument("--c-cap", type=float, default=10.0)
        p.add_argument("--r", type=float, help="root exponent (root, fdb)")
        p.add_argument("--h", choices=["power", "identity"], default="power")
        p.add_argument("--trials", type=int, default=1000, help="fuzz trials")
    return parser


def _version() -> str:
    try:
        return metadata.version("flatjet")
    except metadata.PackageNotFoundError:
        return "unknown"


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        raw_bytes = Path(args.input).read_bytes() if Path(args.input).is_file() else b""
        data = _load_json(args.input)
        if args.grid is not None and args.grid < 2:
            raise DataError("--grid must be >= 2")
        if args.command == "fdb":
            outputs = cmd_fdb(data, args)
        else:
            if isinstance(data, dict) and args.s is not None:
                data = {**data, "s": args.s}
            outputs = COMMANDS[args.command](parse_instance(data), args)
    except FlatJetError as exc:
        print(f"flatjet {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    written = []
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in outputs.items():
            (out / name).write_text(text)
            written.append(str(out / name))
    else:
        for text in outputs.values():
            sys.stdout.write(text)
    manifest = {
        "command": args.command,
        "input": args.input,
        "input_sha256": hashlib.sha256(raw_bytes).hexdigest(),
        "seed": args.seed,
        "version": _version(),
        "wall_time_s": time.perf_counter() - start,
        "outputs": written,
    }
    if args.out:
        (Path(args.out) / "manifest.json").write_text(_dumps(manifest))
    else:
        sys.stderr.write(_dumps(manifest))
    return 0


def main(argv: Sequence[str] | None = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
