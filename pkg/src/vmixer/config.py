"""Run configuration documents: JSON with a published schema and dotted-path overrides."""

from __future__ import annotations

import copy
import json

import jsonschema

from .model import ModelConfig
from .training import DeepSupervisionConfig, LrSchedule, OptimizerState

_STAGE = {
    "type": "object",
    "properties": {
        "block_kind": {"enum": ["LVSA", "GVM", "lvsa", "gvm"]},
        "depth": {"type": "integer", "minimum": 0},
        "channels": {"type": ["integer", "null"], "minimum": 1},
        "window": {
            "type": ["array", "null"],
            "items": {"type": "integer", "minimum": 1},
            "minItems": 3,
            "maxItems": 3,
        },
        "heads": {"type": ["integer", "null"], "minimum": 1},
    },
    "required": ["block_kind"],
    "additionalProperties": False,
}

_DIMS = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3, "maxItems": 3}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "vmixer run configuration",
    "type": "object",
    "properties": {
        "model": {
            "type": "object",
            "properties": {
                "input_channels": {"type": "integer", "minimum": 1},
                "num_classes": {"type": "integer", "minimum": 2},
                "base_channels": {"type": "integer", "minimum": 1},
                "stages": {"type": "array", "items": _STAGE, "minItems": 4, "maxItems": 4},
                "training_volume_dims": _DIMS,
                "deep_supervision": {"type": "boolean"},
                "seed": {"type": "integer", "minimum": 0},
                "rel_bias": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "training": {
            "type": "object",
            "properties": {
                "epochs": {"type": "integer", "minimum": 1},
                "iters_per_epoch": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "initial_lr": {"type": "number", "exclusiveMinimum": 0},
                "final_epoch": {"type": "integer", "minimum": 1},
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "weight_decay": {"type": "number", "minimum": 0},
                "grad_clip": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "alphas": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "seed": {"type": "integer", "minimum": 0},
                "checkpoint_every": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "data": {
            "type": "object",
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "radius_range": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 2,
                    "maxItems": 2,
                },
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

DEFAULT_CONFIG = {
    "model": ModelConfig().to_dict(),
    "training": {
        "epochs": 1000,
        "iters_per_epoch": 250,
        "batch_size": 2,
        "initial_lr": 0.01,
        "final_epoch": 1000,
        "momentum": 0.99,
        "weight_decay": 3e-5,
        "grad_clip": 12.0,
        "alphas": [4 / 7, 2 / 7, 1 / 7],
        "seed": 0,
        "checkpoint_every": 50,
    },
    "data": {"count": 20, "seed": 0, "radius_range": [0.15, 0.3]},
}


class ConfigDocumentError(ValueError):
    """A config document or override is invalid."""


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str) -> tuple:
    """``"training.epochs=2"`` -> ``(["training", "epochs"], 2)``; values parse as JSON, else stay strings."""
    if "=" not in text:
        raise ConfigDocumentError(f"override {text!r} must look like dotted.path=value")
    key, raw = text.split("=", 1)
    path = key.strip().split(".")
    if not all(path):
        raise ConfigDocumentError(f"override {text!r} has an empty path component")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_override(doc: dict, path: list, value) -> dict:
    out = copy.deepcopy(doc)
    node = out
    for part in path[:-1]:
        if isinstance(node, list):
            node = node[int(part)]
            continue
        node = node.setdefault(part, {})
    last = path[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value
    return out


def validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigDocumentError(f"config invalid at {where}: {exc.message}") from exc


def load_config(path=None, overrides=()) -> dict:
    """Defaults, merged with the document at ``path`` (if any), then the overrides, then validated."""
    doc = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigDocumentError(f"{path}: not valid JSON ({exc})") from exc
        validate(_merge({}, user))
        doc = _merge(doc, user)
    for text in overrides:
        try:
            doc = apply_override(doc, *parse_override(text))
        except (IndexError, ValueError, TypeError) as exc:
            if isinstance(exc, ConfigDocumentError):
                raise
            raise ConfigDocumentError(f"cannot apply override {text!r}: {exc}") from exc
    validate(doc)
    return doc


def model_config(doc: dict) -> ModelConfig:
    return ModelConfig.from_dict(doc["model"])


def schedule(doc: dict) -> LrSchedule:
    t = doc["training"]
    return LrSchedule(initial_lr=t["initial_lr"], final_epoch=t["final_epoch"])


def optimizer(doc: dict) -> OptimizerState:
    t = doc["training"]
    return OptimizerState(momentum=t["momentum"], weight_decay=t["weight_decay"])


def deep_supervision(doc: dict) -> DeepSupervisionConfig:
    return DeepSupervisionConfig(tuple(doc["training"]["alphas"]), enabled=doc["model"]["deep_supervision"])
