"""JSON run configuration: schema, validation with JSON pointers, conversion to model objects."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import jsonschema

from .coeff import PRESETS, CoefficientSet, preset
from .expr import ExprError, parse_expr
from .geometry import CellGeometry, GeometryError, MacroDomain
from .twoscale import SweepConfig

_NUM = {"type": "number"}
_EXPR = {"type": "string", "minLength": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "dimension": {"const": 2},
        "cell": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["type"],
                 "properties": {"type": {"const": "square"},
                                "half_width": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5}}},
                {"type": "object", "additionalProperties": False, "required": ["type", "vertices"],
                 "properties": {"type": {"const": "polygon"},
                                "vertices": {"type": "array", "minItems": 3,
                                             "items": {"type": "array", "items": _NUM,
                                                       "minItems": 2, "maxItems": 2}}}},
                {"type": "object", "additionalProperties": False, "required": ["type"],
                 "properties": {"type": {"const": "none"}}},
            ]
        },
        "coefficients": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": list(PRESETS)},
                "a": {"type": "array", "minItems": 2, "maxItems": 2,
                      "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": _EXPR}},
                "theta": _EXPR,
                "f": {"type": "array", "minItems": 2, "maxItems": 2, "items": _EXPR},
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "alpha0": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "mesh": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "h_cell": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.25},
                "h_macro": {"type": "number", "exclusiveMinimum": 0},
                "h_micro_factor": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.25},
            },
        },
        "sweep": {"type": "array", "minItems": 1,
                  "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
        "macro_domain": {
            "type": "object", "additionalProperties": False,
            "properties": {"L1": {"type": "number", "exclusiveMinimum": 0},
                           "L2": {"type": "number", "exclusiveMinimum": 0}},
        },
        "hole_condition": {"enum": ["slip", "natural"]},
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"directory": {"type": "string"}, "vtk": {"type": "boolean"},
                           "csv": {"type": "boolean"}, "json": {"type": "boolean"}},
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}

DEFAULTS = {
    "dimension": 2,
    "cell": {"type": "square", "half_width": 0.25},
    "coefficients": {"a": [["1", "0"], ["0", "1"]], "theta": "1", "f": ["1", "0"], "alpha": 1.0, "alpha0": 1.0},
    "mesh": {"h_cell": 0.04, "h_macro": 1 / 32, "h_micro_factor": 0.25},
    "sweep": [0.25, 0.125, 0.0625],
    "macro_domain": {"L1": 1.0, "L2": 1.0},
    "hole_condition": "slip",
    "output": {"directory": "out", "vtk": True, "csv": True, "json": True},
    "seed": 0,
}


class ConfigError(ValueError):
    """Invalid configuration; ``pointer`` is the JSON pointer of the offending field."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer or "/"


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) and k != "cell" else v
    return out


@dataclass
class RunConfig:
    raw: dict
    digest: str
    cell: CellGeometry
    coeffs: CoefficientSet
    domain: MacroDomain
    h_cell: float
    h_macro: float
    h_micro_factor: float
    sweep: list
    hole_condition: str
    output: dict
    seed: int

    def sweep_config(self) -> SweepConfig:
        return SweepConfig(self.cell, self.coeffs, self.domain, tuple(self.sweep), self.h_cell,
                           self.h_macro, self.h_micro_factor, self.hole_condition, self.seed)


def canonical_digest(raw: dict) -> str:
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _coefficients(c: dict) -> CoefficientSet:
    if "preset" in c:
        base = preset(c["preset"])
        if "theta" in c or "f" in c or "a" in c:
            extra = {k: c[k] for k in ("a", "theta", "f") if k in c}
            d = base.to_dict()
            d.update(extra)
            return CoefficientSet.from_strings(d["a"], d["theta"], d["f"], c.get("alpha", 1.0),
                                               c.get("alpha0", 1.0), name=c["preset"])
        return base
    name = "canonical" if c == DEFAULTS["coefficients"] else "custom"
    return CoefficientSet.from_strings(c["a"], c["theta"], c["f"], c["alpha"], c["alpha0"], name=name)


def load_config(source) -> RunConfig:
    """Validate and convert a configuration (path, JSON text or dict)."""
    if isinstance(source, dict):
        user = source
    else:
        p = Path(source)
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("/", f"invalid JSON: {exc}") from exc
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(user), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        e = errors[0]
        raise ConfigError(_pointer(e.absolute_path), e.message)
    if "coefficients" in user and "preset" not in user["coefficients"]:
        raw_c = _merge(DEFAULTS["coefficients"], user["coefficients"])
    else:
        raw_c = user.get("coefficients", DEFAULTS["coefficients"])
    raw = _merge(DEFAULTS, {k: v for k, v in user.items() if k != "coefficients"})
    raw["coefficients"] = raw_c
    for key in ("a",):
        if key in raw_c:
            for i in range(2):
                for j in range(2):
                    _check_expr(raw_c["a"][i][j], f"/coefficients/a/{i}/{j}")
            if raw_c["a"][0][1] != raw_c["a"][1][0] and parse_expr(raw_c["a"][0][1]) != parse_expr(raw_c["a"][1][0]):
                raise ConfigError("/coefficients/a/1/0", "coefficient matrix must be symmetric (a21 = a12)")
    if "theta" in raw_c:
        _check_expr(raw_c["theta"], "/coefficients/theta")
    if "f" in raw_c:
        for i in range(2):
            _check_expr(raw_c["f"][i], f"/coefficients/f/{i}")
    eps = raw["sweep"]
    for i in range(1, len(eps)):
        if not eps[i] < eps[i - 1]:
            raise ConfigError(f"/sweep/{i}", "sweep values must be strictly decreasing")
    try:
        cell = _cell(raw["cell"])
    except GeometryError as exc:
        raise ConfigError("/cell", str(exc)) from exc
    coeffs = _coefficients(raw_c)
    dom = raw["macro_domain"]
    m = raw["mesh"]
    return RunConfig(
        raw, canonical_digest(raw), cell, coeffs,
        MacroDomain(Fraction(dom["L1"]).limit_denominator(10 ** 9), Fraction(dom["L2"]).limit_denominator(10 ** 9)),
        float(m["h_cell"]), float(m["h_macro"]), float(m["h_micro_factor"]),
        list(eps), raw["hole_condition"], raw["output"], int(raw["seed"]),
    )


def _check_expr(text: str, pointer: str) -> None:
    try:
        parse_expr(text)
    except ExprError as exc:
        raise ConfigError(pointer, str(exc)) from exc


def _cell(c: dict) -> CellGeometry:
    if c["type"] == "square":
        return CellGeometry.square(Fraction(c.get("half_width", 0.25)).limit_denominator(10 ** 9))
    if c["type"] == "polygon":
        return CellGeometry.polygon([tuple(v) for v in c["vertices"]])
    return CellGeometry.empty()
