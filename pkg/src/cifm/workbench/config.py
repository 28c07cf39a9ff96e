"""Experiment configuration: one YAML/JSON document, validated against a JSON schema.

Sections: ``dataset``, ``model``, ``objective``, ``cim``, ``train``, ``eval``,
plus ``preset``, ``output_dir`` and ``checkpoint``. A preset is expanded first;
file values override it, and dotted command-line overrides come last.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema
import yaml

from ..errors import ConfigError, UsageError
from ..evalharness import SweepSpec, TransferSpec
from ..objective import ObjectiveConfig
from ..perturbation import PerturbationSpec
from ..trainer import ModelConfig, TrainConfig
from .presets import resolve_preset

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT_POS = {"type": "integer", "minimum": 1}
_STR_LIST = {"type": "array", "items": {"type": "string"}}


def _obj(props: dict, required: list | None = None) -> dict:
    out = {"type": "object", "properties": props, "additionalProperties": False}
    if required:
        out["required"] = required
    return out


SCHEMA = _obj({
    "preset": {"type": "string"},
    "output_dir": {"type": "string"},
    "checkpoint": {"type": "string"},
    "seeds": {"type": "array", "items": {"type": "integer"}},
    "dataset": _obj({
        "synthetic": {"enum": ["separable", "noisy", "taxonomy-pair", "regression", "xor"]},
        "seed": {"type": "integer"},
        "sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3, "maxItems": 3},
        "path": {"type": "string"},
        "format": {"enum": ["tsv", "csv", "jsonl"]},
        "benchmark": {"type": "string"},
        "side": {"enum": ["source", "target"]},
    }),
    "model": _obj({
        "arch": {"enum": ["mlp", "transformer"]},
        "dim": _INT_POS, "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "vocab_size": {"type": "integer", "minimum": 3}, "num_layers": _INT_POS, "heads": _INT_POS,
        "pooling": {"enum": ["mean", "first", None]}, "vocab_seed": {"type": "integer"},
    }),
    "objective": _obj({
        "beta": {"type": "number", "minimum": 0}, "tau": _POS,
        "mi_estimator": {"enum": ["infonce", "mine"]},
        "task_kind": {"enum": ["classification", "regression"]},
        "num_negatives": {"type": ["integer", "null"], "minimum": 0},
        "normalize": {"type": "boolean"},
        "mine_hidden": _INT_POS, "mine_ema_rate": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    }),
    "cim": {"oneOf": [{"type": "null"}, _obj({
        "epsilon": _POS, "rate": {"type": "number", "minimum": 0, "maximum": 1},
        "norm": {"enum": ["l2"]}, "target_groups": {**_STR_LIST, "minItems": 1},
        "weight": {"type": ["number", "null"], "minimum": 0},
    })]},
    "train": _obj({
        "epochs": _INT_POS, "batch_size": _INT_POS, "max_length": _INT_POS, "lr": _POS,
        "weight_decay": {"type": "number", "minimum": 0}, "patience": _INT_POS,
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "optimizer": {"enum": ["adamax", "adam", "adamw"]},
        "betas": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "grad_clip": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "eval_batch_size": _INT_POS,
    }),
    "eval": _obj({
        "sweep": _obj({"kind": {"enum": ["random", "adversarial"]},
                       "strengths": {"type": "array", "items": {"type": "number", "minimum": 0}},
                       "seeds": {"type": "array", "items": {"type": "integer"}}}),
        "transfer": _obj({"targets": {"type": "array", "items": {"type": "object"}},
                          "probe": {"enum": ["linear", "cnn"]}, "epochs": _INT_POS, "lr": _POS,
                          "weight_decay": {"type": "number", "minimum": 0}, "frozen_groups": _STR_LIST}),
        "ood": _obj({"target": {"type": "object"}, "label_map": {"type": "object"}}),
        "subsample": _obj({"ratios": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
                           "stratified": {"type": "boolean"}}),
    }),
})


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_dotted(doc: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    cur = doc
    for k in keys[:-1]:
        if cur.get(k) is None:
            cur[k] = {}
        cur = cur[k]
        if not isinstance(cur, dict):
            raise UsageError(f"cannot set {dotted}: {k} is not a section")
    cur[keys[-1]] = value


def parse_override(token: str) -> tuple[str, Any]:
    """``a.b=value`` with the value parsed as YAML (numbers, lists, null...)."""
    if "=" not in token:
        raise UsageError(f"override {token!r} must look like key.path=value")
    key, raw = token.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_document(path: str | Path | None) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    doc = yaml.safe_load(text) or {}
    if not isinstance(doc, dict):
        raise UsageError("config document must be a mapping")
    return doc


def resolve(doc: dict, overrides: list[tuple[str, Any]] | None = None) -> dict:
    """Expand preset, apply overrides, validate. Raises UsageError on any schema violation."""
    overrides = overrides or []
    preset = doc.get("preset")
    for k, v in overrides:
        if k == "preset":
            preset = v
    merged = {}
    if preset:
        try:
            merged = resolve_preset(preset)
        except KeyError as exc:
            raise UsageError(str(exc)) from None
    merged = deep_merge(merged, doc)
    for k, v in overrides:
        set_dotted(merged, k, v)
    try:
        jsonschema.validate(merged, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"config error at {where}: {exc.message}") from None
    return merged


def config_hash(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ExperimentConfig:
    raw: dict
    objective: ObjectiveConfig
    train: TrainConfig
    model: ModelConfig
    dataset: dict
    eval: dict = field(default_factory=dict)
    output_dir: str = "runs"
    checkpoint: str | None = None

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def build_experiment(doc: dict) -> ExperimentConfig:
    """Turn a validated document into typed configs (re-raising bad values as UsageError)."""
    try:
        obj = dict(doc.get("objective", {}))
        if "tau" in obj:
            obj["temperature"] = obj.pop("tau")
        cim = doc.get("cim")
        objective = ObjectiveConfig(**obj, cim=PerturbationSpec(**cim) if cim else None)
        train_doc = dict(doc.get("train", {}))
        if "seeds" in doc and "seeds" not in train_doc:
            train_doc["seeds"] = doc["seeds"]
        train = TrainConfig(**train_doc)
        model = ModelConfig(**doc.get("model", {}))
        ev = dict(doc.get("eval", {}))
        if "sweep" in ev:
            SweepSpec(**ev["sweep"])
        if "transfer" in ev:
            TransferSpec(**{k: v for k, v in ev["transfer"].items() if k != "targets"})
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    return ExperimentConfig(doc, objective, train, model, dict(doc.get("dataset", {})), ev,
                            doc.get("output_dir", "runs"), doc.get("checkpoint"))
