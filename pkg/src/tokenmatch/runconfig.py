"""Flat, typed run configuration files.

Configs are flat JSON objects with typed keys, validated against a per-command
schema before any work starts.  Unknown keys, wrong types and missing required
keys are all configuration errors; every run log embeds the hash of the
validated config.
"""

import hashlib
import json

from .errors import ConfigError


class Key:
    def __init__(self, type_, required=False, default=None, choices=None):
        self.type = type_
        self.required = required
        self.default = default
        self.choices = choices


def _coerce(name, key, value):
    if key.type is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if key.type is int and isinstance(value, bool):
        raise ConfigError(f"config key {name!r} must be int, got bool")
    if not isinstance(value, key.type):
        raise ConfigError(
            f"config key {name!r} must be {key.type.__name__}, "
            f"got {type(value).__name__}"
        )
    if key.choices is not None and value not in key.choices:
        raise ConfigError(f"config key {name!r} must be one of {key.choices}")
    return value


def validate(config: dict, schema: dict, command: str) -> dict:
    if not isinstance(config, dict):
        raise ConfigError(f"{command} config must be a flat JSON object")
    out = {}
    for name, key in schema.items():
        if name in config:
            out[name] = _coerce(name, key, config[name])
        elif key.required:
            raise ConfigError(f"{command} config missing required key {name!r}")
        else:
            out[name] = key.default
    unknown = set(config) - set(schema)
    if unknown:
        raise ConfigError(f"{command} config has unknown keys {sorted(unknown)}")
    return out


def load(path, schema: dict, command: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return validate(raw, schema, command)


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True).encode("utf-8")
    ).hexdigest()


MODEL_KEYS = {
    "embed_dim": Key(int, default=192),
    "depth": Key(int, default=6),
    "num_heads": Key(int, default=4),
    "patch": Key(int, default=8),
    "num_levels": Key(int, default=4),
    "matching_heads": Key(int, default=4),
    "decoder_dim": Key(int, default=64),
    "label_depth": Key(int, default=4),
    "resolution": Key(int, default=64),
    "bias_tuning": Key(str, default="all", choices=("all", "attn", "mlp")),
}

META_TRAIN_SCHEMA = dict(
    MODEL_KEYS,
    data_root=Key(str, required=True),
    iterations=Key(int, default=2000),
    lr=Key(float, default=1e-3),
    task_lr_scale=Key(float, default=10.0),
    weight_decay=Key(float, default=0.01),
    warmup=Key(int, default=100),
    groups_per_step=Key(int, default=1),
    checkpoint_every=Key(int, default=1000),
    log_every=Key(int, default=25),
    shots=Key(int, default=4),
    queries=Key(int, default=4),
    tasks_per_batch=Key(int, default=4),
)

FINETUNE_SCHEMA = {
    "data_root": Key(str, required=True),
    "group_id": Key(str, required=True),
    "shots": Key(int, default=10),
    "steps": Key(int, default=200),
    "lr": Key(float, default=5e-3),
    "source_group": Key(str, default=""),
    "augment_crop": Key(bool, default=True),
    "augment_flip": Key(bool, default=False),
    "standardize_continuous": Key(bool, default=True),
}

PREDICT_SCHEMA = {
    "data_root": Key(str, required=True),
    "group_id": Key(str, required=True),
    "task_params": Key(str, required=True),
    "indices": Key(list, default=None),
    "shots": Key(int, default=10),
}

EVAL_SCHEMA = {
    "metric": Key(str, required=True,
                  choices=("iou", "f1", "mae_count", "pck", "add",
                           "ap50_instances", "region_J", "boundary_F")),
    "pred": Key(str, required=True),
    "gt": Key(str, required=True),
    "threshold": Key(float, default=0.0),
    "task_id": Key(str, default=""),
    "support_size": Key(int, default=0),
}

INSPECT_SCHEMA = {
    "data_root": Key(str, required=True),
    "task_id": Key(str, default=""),
    "shots": Key(int, default=4),
    "query_index": Key(int, default=0),
    "query_token": Key(int, default=0),
}

SYNTH_SCHEMA = {
    "preset": Key(str, required=True, choices=("desk-train", "desk-holdout")),
    "scale": Key(float, default=1.0),
}
