"""Experiment configuration: JSON documents checked against ``CONFIG_SCHEMA``."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import jsonschema

from .errors import ConfigError
from .model import Prior
from .sevo import ProblemParams

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "mpamp experiment",
    "type": "object",
    "properties": {
        "prior": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["bernoulli_gaussian"]},
                "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "active_variance": _pos,
            },
            "required": ["epsilon"],
            "additionalProperties": False,
        },
        "kappa": _pos,
        "sigma_z_sq": {"type": "number", "minimum": 0},
        "P": {"type": "integer", "minimum": 1},
        "cost": {
            "type": "object",
            "properties": {"b": {"type": "number", "minimum": 0}, "C1": {"type": "number", "minimum": 0},
                           "C2": {"type": "number", "minimum": 0}},
            "oneOf": [{"required": ["b"], "not": {"anyOf": [{"required": ["C1"]}, {"required": ["C2"]}]}},
                      {"required": ["C1", "C2"], "not": {"required": ["b"]}}],
            "additionalProperties": False,
        },
        "delta": _pos,
        "delta_over_mmse": {"type": "number", "exclusiveMinimum": 1},
        "emse_target": _pos,
        "grids": {
            "type": "object",
            "properties": {
                "n_states": {"type": "integer", "minimum": 2},
                "rate_step": _pos,
                "rate_max": _pos,
                "max_horizon": {"type": "integer", "minimum": 1},
                "depth": _pos,
            },
            "additionalProperties": False,
        },
        "rd_model": {"enum": ["gaussian", "blahut_arimoto"]},
        "schedule": {"type": "array", "items": {"type": ["number", "string"]}},
        "schedule_csv": {"type": "string"},
        "T": {"type": "integer", "minimum": 1},
        "N": {"type": "integer", "minimum": 1},
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "quant_mode": {"enum": ["lossless", "gaussian", "uniform"]},
        "transport": {"enum": ["channel", "socket"]},
        "pareto": {
            "type": "object",
            "properties": {
                "b_list": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "delta_over_mmse_list": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 1},
                                         "minItems": 1},
                "burn_in": {"type": "integer", "minimum": 1},
                "fit_b": {"type": "number", "minimum": 0},
                "fit_emse_target": _pos,
                "hull_tol": _pos,
            },
            "additionalProperties": False,
        },
        "rd": {
            "type": "object",
            "properties": {
                "source": {"enum": ["gaussian", "node_marginal"]},
                "variance": _pos,
                "sigma_sq": _pos,
                "n_points": {"type": "integer", "minimum": 3},
                "half_width": _pos,
                "slopes": {"type": "array", "items": _pos, "minItems": 1},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

BASE_KEYS = ("prior", "kappa", "sigma_z_sq", "P")


@dataclass
class ExperimentConfig:
    raw: dict
    params: ProblemParams
    digest: str
    extras: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.raw.get(key, default)

    def require(self, *keys):
        for k in keys:
            if k not in self.raw:
                raise ConfigError(f"missing required key '{k}'")

    def cost_args(self):
        self.require("cost")
        c = self.raw["cost"]
        return ("b", c["b"]) if "b" in c else ("C1C2", (c["C1"], c["C2"]))

    def resolve_delta(self, mmse_value):
        """Absolute final-MSE target from ``delta``, ``delta_over_mmse`` or ``emse_target``."""
        given = [k for k in ("delta", "delta_over_mmse", "emse_target") if k in self.raw]
        if not given:
            raise ConfigError("missing required key 'delta' (or 'delta_over_mmse' / 'emse_target')")
        if len(given) > 1:
            raise ConfigError(f"give only one of delta, delta_over_mmse, emse_target (got {', '.join(given)})")
        k = given[0]
        if k == "delta":
            return float(self.raw["delta"])
        if k == "delta_over_mmse":
            return float(self.raw["delta_over_mmse"]) * mmse_value
        return mmse_value + float(self.raw["emse_target"])


def canonical_digest(raw, extra=None):
    doc = {"config": raw, "cli": extra or {}}
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def load_config(path_or_dict, overrides=None) -> ExperimentConfig:
    """Parse, validate and normalize a configuration.

    ``overrides`` are CLI values (seed, P, ...) merged on top and folded into
    the digest.
    """
    if isinstance(path_or_dict, dict):
        raw = copy.deepcopy(path_or_dict)
    else:
        try:
            with open(path_or_dict) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path_or_dict}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path_or_dict}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    for k in BASE_KEYS:
        if k not in raw:
            raise ConfigError(f"missing required key '{k}'")
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at '{where}': {exc.message}") from None
    pr = raw["prior"]
    params = ProblemParams(
        Prior(pr["epsilon"], pr.get("active_variance", 1.0)),
        float(raw["kappa"]),
        float(raw["sigma_z_sq"]),
        int(raw["P"]),
    )
    return ExperimentConfig(raw, params, canonical_digest(raw))


def parse_rate(value):
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "lossless"):
            return math.inf
        return float(value)
    return float(value)


def read_schedule_csv(path):
    """Rates from a CSV with a ``rate_bits`` column; ``#`` lines are comments."""
    try:
        with open(path) as fh:
            rows = [line for line in fh if not line.startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read schedule {path}: {exc}") from exc
    reader = csv.DictReader(rows)
    if reader.fieldnames is None or "rate_bits" not in reader.fieldnames:
        raise ConfigError(f"schedule {path}: missing column 'rate_bits'")
    rates = [parse_rate(r["rate_bits"]) for r in reader]
    if not rates:
        raise ConfigError(f"schedule {path} has no rows")
    return rates
