"""Run-configuration documents: JSON with ``surface``, ``graph``, ``flow`` and ``experiment`` blocks."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import jsonschema

from . import graph as graphs
from .errors import HyperflockError, InvalidParameter
from .flow import FlowParams
from .manifold import ImplicitSurface, builtin_surface

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["surface"],
    "properties": {
        "surface": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["sphere", "ellipsoid", "quartic", "torus"]},
                "dim": {"type": "integer", "minimum": 2},
                "A": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"anyOf": [_NUM, {"type": "array", "items": _NUM}]},
                },
                "level": _POS,
                "radius": _POS,
                "R": _POS,
                "r": _POS,
            },
        },
        "graph": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["complete", "ring", "path", "star", "edges"]},
                "n": {"type": "integer", "minimum": 1},
                "edges": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "minItems": 2,
                        "maxItems": 3,
                        "items": _NUM,
                    },
                },
            },
        },
        "flow": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": _POS,
                "t_end": _POS,
                "record_every": {"type": "integer", "minimum": 1},
                "retract_tol": _POS,
                "stop_early": {"type": "boolean"},
                "v_tol": _POS,
                "field_tol": _POS,
                "field": {"enum": ["gradient", "zhu"]},
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer", "minimum": 0},
                "trials": {"type": "integer", "minimum": 1},
                "init": {"enum": ["random", "splay", "consensus", "file"]},
                "init_file": {"type": "string"},
                "twist": {"type": "integer"},
                "perturbation": {"type": "number", "minimum": 0},
                "which": {"enum": ["assumption1", "convexity", "alpha"]},
                "n_pairs": {"type": "integer", "minimum": 1},
                "n_samples": {"type": "integer", "minimum": 2},
                "state_file": {"type": "string"},
                "min_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "threshold": _POS,
            },
        },
    },
}


class ConfigError(HyperflockError):
    pass


def _path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate(doc: Any) -> dict[str, Any]:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{_path(e)}: {e.message}" for e in errors]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))
    return doc


def load_config(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    validate(doc)
    doc.setdefault("flow", {})
    doc.setdefault("experiment", {})
    doc["_base_dir"] = str(path.resolve().parent)
    return doc


def build_surface(block: dict[str, Any]) -> ImplicitSurface:
    params = {k: v for k, v in block.items() if k not in ("kind", "dim")}
    try:
        return builtin_surface(block["kind"], block.get("dim"), **params)
    except InvalidParameter as exc:
        raise ConfigError(f"surface: {exc}") from exc


def build_graph(block: dict[str, Any] | None) -> graphs.Graph:
    if block is None:
        raise ConfigError("graph: block is required for this command")
    try:
        g = graphs.build(block["kind"], block.get("n"), block.get("edges"))
    except InvalidParameter as exc:
        raise ConfigError(f"graph: {exc}") from exc
    if not graphs.is_connected(g):
        raise ConfigError("graph: the interaction graph must be connected")
    return g


def build_flow(block: dict[str, Any]) -> tuple[FlowParams, str]:
    kwargs = {k: v for k, v in block.items() if k != "field"}
    try:
        return FlowParams(**kwargs), block.get("field", "gradient")
    except InvalidParameter as exc:
        raise ConfigError(f"flow: {exc}") from exc


def resolve(doc: dict[str, Any], rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else Path(doc.get("_base_dir", ".")) / p
