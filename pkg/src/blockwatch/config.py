"""Run configuration: defaults, JSON Schema validation and conversion."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .core import TEP_PARTITION, BlockPartition
from .errors import ConfigError
from .olae import TrainConfig
from .pipeline import MODES, PipelineConfig
from .simgen import FAULT_KINDS
from .stats import CusumConfig

DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    "out": "blockwatch_out",
    "data": {"in_control": None, "streams": []},
    "partition": TEP_PARTITION.to_dict(),
    "olae": {
        "window_len": 20, "hidden_dim": 16, "latent_dim": 5, "epochs": 30,
        "batch_size": 64, "learning_rate": 1e-3, "ortho_weight": 1.0,
        "gradient_clip_norm": 5.0, "ortho_exclude_diagonal": False,
        "gram_normalization": "batch",
    },
    "stats": {
        "d": 10, "k": 0.1, "r": None, "confidence": 0.99, "target_far": 0.0027,
        "cusum_form": "qiu_hawkins", "calib_reps": 200, "calib_horizon": 2400,
        "calib_block_len": 50,
    },
    "fusion": {"alpha": 0.01, "sustain_m": 3, "threshold": None},
    "train_fraction": 0.7,
    "ablation": "full",
    "simulate": {
        "T": 2400, "onset": 600, "magnitude": 3.0, "faults": list(FAULT_KINDS),
        "fault_block": "2", "targets": None, "spec_seed": 0,
        "coupling": 0.1, "process_noise": 0.6, "measurement_noise": 0.2,
    },
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_prob = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_posint = {"type": "integer", "minimum": 1}


def _obj(props: dict) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props}


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "blockwatch run configuration",
    **_obj({
        "seed": {"type": "integer", "minimum": 0, "default": DEFAULTS["seed"]},
        "jobs": {**_posint, "default": DEFAULTS["jobs"]},
        "out": {"type": "string", "default": DEFAULTS["out"]},
        "data": _obj({
            "in_control": {"type": ["string", "null"], "default": None},
            "streams": {"type": "array", "items": {"type": "string"}, "default": []},
        }),
        "partition": {
            "type": "object", "minProperties": 1, "default": DEFAULTS["partition"],
            "additionalProperties": {
                "type": "array", "minItems": 1,
                "items": {"type": "integer", "minimum": 0}},
        },
        "olae": _obj({
            k: {**schema, "default": DEFAULTS["olae"][k]} for k, schema in {
                "window_len": _posint, "hidden_dim": _posint, "latent_dim": _posint,
                "epochs": _posint, "batch_size": _posint, "learning_rate": _pos,
                "ortho_weight": {"type": "number", "minimum": 0},
                "gradient_clip_norm": _pos,
                "ortho_exclude_diagonal": {"type": "boolean"},
                "gram_normalization": {"enum": ["batch", "none"]},
            }.items()}),
        "stats": _obj({
            k: {**schema, "default": DEFAULTS["stats"][k]} for k, schema in {
                "d": {"type": "integer", "minimum": 2},
                "k": {"type": "number", "minimum": 0},
                "r": {"type": ["integer", "null"], "minimum": 1},
                "confidence": _prob, "target_far": _prob,
                "cusum_form": {"enum": ["qiu_hawkins", "paper"]},
                "calib_reps": _posint, "calib_horizon": _posint,
                "calib_block_len": _posint,
            }.items()}),
        "fusion": _obj({
            "alpha": {**_prob, "default": 0.01},
            "sustain_m": {**_posint, "default": 3},
            "threshold": {"type": ["number", "null"], "default": None},
        }),
        "train_fraction": {**_prob, "default": DEFAULTS["train_fraction"]},
        "ablation": {"enum": list(MODES), "default": DEFAULTS["ablation"]},
        "simulate": _obj({
            k: {**schema, "default": DEFAULTS["simulate"][k]} for k, schema in {
                "T": _posint, "onset": {"type": "integer", "minimum": 0},
                "magnitude": {"type": "number", "minimum": 0},
                "faults": {"type": "array", "items": {"enum": list(FAULT_KINDS)}},
                "fault_block": {"type": "string"},
                "targets": {"type": ["array", "null"],
                            "items": {"type": "integer", "minimum": 0}},
                "spec_seed": {"type": "integer", "minimum": 0},
                "coupling": _num, "process_noise": {"type": "number", "minimum": 0},
                "measurement_noise": {"type": "number", "minimum": 0},
            }.items()}),
    }),
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "partition":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file, then ``overrides``; validated at each layer."""
    doc = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
        validate(doc)
    merged = _merge(DEFAULTS, doc)
    if overrides:
        merged = _merge(merged, overrides)
    validate(merged)
    return merged


def partition_of(cfg: dict) -> BlockPartition:
    try:
        return BlockPartition.from_dict(cfg["partition"])
    except ValueError as exc:
        raise ConfigError(f"partition: {exc}") from None


def pipeline_config(cfg: dict) -> PipelineConfig:
    o, s, f = cfg["olae"], cfg["stats"], cfg["fusion"]
    try:
        train = TrainConfig(
            epochs=o["epochs"], batch_size=o["batch_size"],
            learning_rate=o["learning_rate"], ortho_weight=o["ortho_weight"],
            seed=cfg["seed"], gradient_clip_norm=o["gradient_clip_norm"],
            ortho_exclude_diagonal=o["ortho_exclude_diagonal"],
            gram_normalization=o["gram_normalization"])
        cusum = CusumConfig(d=s["d"], k=s["k"], r=s["r"], form=s["cusum_form"])
        return PipelineConfig(
            window_len=o["window_len"], hidden_dim=o["hidden_dim"],
            latent_dim=o["latent_dim"], train=train, cusum=cusum,
            confidence=s["confidence"], target_far=s["target_far"],
            calib_reps=s["calib_reps"], calib_horizon=s["calib_horizon"],
            calib_block_len=s["calib_block_len"], alpha=f["alpha"],
            sustain_m=f["sustain_m"], threshold=f["threshold"],
            train_fraction=cfg["train_fraction"], seed=cfg["seed"], jobs=cfg["jobs"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def schema_json() -> str:
    return json.dumps(SCHEMA, indent=2, sort_keys=True) + "\n"
