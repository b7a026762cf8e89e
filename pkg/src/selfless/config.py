"""YAML run configuration: validation, dotted overrides, sweep expansion."""
from __future__ import annotations

import copy
import itertools
from dataclasses import fields
from pathlib import Path
from typing import Any, Iterable

import yaml

from .trainer import SequenceConfig


class ConfigError(ValueError):
    pass


DATA_DEFAULTS = {
    "kind": "permuted_mnist",
    "root": None,
    "n_tasks": 5,
    "seed": None,
    "overlap": 0.0,
    "n_classes": 4,
    "informative": 10,
    "n_train": 1000,
    "n_test": 500,
    "noise": 1.0,
    "steps_per_phase": 100,
}
TOP_DEFAULTS = {
    "experiment": "run",
    "output_dir": "runs",
    "formats": ["json", "csv"],
    "data": DATA_DEFAULTS,
    "train": {},
    "sweep": {},
}
TRAIN_FIELDS = {f.name: f for f in fields(SequenceConfig)}
DATA_KINDS = ("permuted_mnist", "synthetic_overlap", "soft_boundary")
FLOAT_FIELDS = {"lambda_ssl", "sigma_fraction", "lambda_omega", "learning_rate", "overlap", "noise"}
INT_FIELDS = {
    "window", "epochs", "batch_size", "seed", "n_tasks", "n_classes", "informative", "n_train", "n_test", "steps_per_phase"
}


def default_config() -> dict:
    cfg = copy.deepcopy(TOP_DEFAULTS)
    cfg["train"] = SequenceConfig().to_dict()
    return cfg


def _coerce(key: str, value: Any) -> Any:
    try:
        if key in FLOAT_FIELDS and value is not None:
            return float(value)
        if key in INT_FIELDS and value is not None:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    return value


def validate(raw: dict) -> dict:
    """Merge ``raw`` over the defaults; reject unknown keys and bad values."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    cfg = default_config()
    for key, value in raw.items():
        if key not in TOP_DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "data":
            for k, v in (value or {}).items():
                if k not in DATA_DEFAULTS:
                    raise ConfigError(f"unknown config key 'data.{k}'")
                cfg["data"][k] = _coerce(k, v)
        elif key == "train":
            for k, v in (value or {}).items():
                if k not in TRAIN_FIELDS:
                    raise ConfigError(f"unknown config key 'train.{k}'")
                cfg["train"][k] = _coerce(k, v)
        elif key == "sweep":
            cfg["sweep"] = {}
            for k, v in (value or {}).items():
                section, name = _split(k)
                if not section:
                    raise ConfigError(f"sweep.{k}: only data and train keys can be swept")
                if not isinstance(v, list) or not v:
                    raise ConfigError(f"sweep.{k}: expected a non-empty list")
                cfg["sweep"][f"{section}.{name}"] = [_coerce(name, x) for x in v]
        else:
            cfg[key] = value
    if cfg["data"]["kind"] not in DATA_KINDS:
        raise ConfigError(f"data.kind: expected one of {DATA_KINDS}, got {cfg['data']['kind']!r}")
    for fmt in cfg["formats"]:
        if fmt not in ("json", "csv"):
            raise ConfigError(f"formats: unknown report format {fmt!r}")
    sequence_config(cfg)
    return cfg


def sequence_config(cfg: dict) -> SequenceConfig:
    try:
        return SequenceConfig(**cfg["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None


def _split(key: str) -> tuple[str, str]:
    if "." in key:
        section, name = key.split(".", 1)
        if section == "train" and name in TRAIN_FIELDS:
            return section, name
        if section == "data" and name in DATA_DEFAULTS:
            return section, name
        raise ConfigError(f"unknown config key {key!r}")
    if key in TRAIN_FIELDS:
        return "train", key
    if key in DATA_DEFAULTS:
        return "data", key
    if key in TOP_DEFAULTS and key not in ("data", "train", "sweep"):
        return "", key
    raise ConfigError(f"unknown config key {key!r}")


def apply_overrides(raw: dict, overrides: Iterable[str]) -> dict:
    """Apply ``key=value`` strings; bare keys resolve to the section that defines them."""
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        key = key.strip()
        value = yaml.safe_load(text)
        if key == "sweep" or key.startswith("sweep."):
            # sweep entries are checked by validate()
            sweep = dict(raw.get("sweep") or {})
            if key == "sweep":
                sweep = value
            else:
                sweep[key.split(".", 1)[1]] = value
            raw["sweep"] = sweep
            continue
        section, name = _split(key)
        if section:
            raw.setdefault(section, {})
            raw[section] = dict(raw[section] or {})
            raw[section][name] = value
        else:
            raw[name] = value
    return raw


def load_config(path, overrides: Iterable[str] = ()) -> dict:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return validate(apply_overrides(raw, overrides))


def expand_sweep(cfg: dict) -> list[dict]:
    """One concrete config per point of the sweep grid; names carry the swept values."""
    sweep = cfg.get("sweep") or {}
    if not sweep:
        return [cfg]
    keys = list(sweep)
    out = []
    for values in itertools.product(*(sweep[k] for k in keys)):
        point = copy.deepcopy(cfg)
        point["sweep"] = {}
        suffix = []
        for key, value in zip(keys, values):
            section, name = key.split(".", 1)
            point[section][name] = value
            suffix.append(f"{name}={value:g}" if isinstance(value, float) else f"{name}={value}")
        point["experiment"] = f"{cfg['experiment']}_" + "_".join(suffix)
        out.append(validate(point))
    return out


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False)
