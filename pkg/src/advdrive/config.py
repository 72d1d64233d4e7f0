"""Run configuration: one JSON document with defaults for every field.

Values are overridden by a config file, then by ``--set dotted.key=value``
pairs. Unknown keys and type mismatches are configuration errors.
"""
import copy
import json
from pathlib import Path

from .errors import ConfigError

ATTACK_GROUPS = ("class", "steer")

DEFAULTS = {
    "seed": 0,
    "data": {
        "path": None,
        "class_count": 10,
        "per_class": 500,
        "size": 64,
        "degrade": True,
    },
    "split": {"train": 0.7, "val": 0.1, "test": 0.2},
    "classifier": {"epochs": 2, "batch_size": 64, "lr": 1e-3},
    # desk-tuned: smaller batches give more generator updates per CPU minute
    "advgan": {
        "epochs": 18,
        "batch_size": 32,
        "alpha": 1.0,
        "beta": 10.0,
        "epsilon": 16 / 255,
        "hinge_c": 3.0,
        "kappa": 0.0,
        "lr_g": 3e-3,
        "lr_d": 1e-4,
    },
    "retrain": {"epochs": 12, "batch_size": 64, "lr": 1e-3, "adv_fraction": 1.0},
    "sim": {
        "track": {"radius": 28.0, "waist": 0.3, "half_width": 2.0, "sign_spacing": 25.0},
        "weathers": [["clear", 0.0], ["rain", 0.5], ["fog", 0.5]],
        "collect_steps": 6000,
        "collect_cars": 4,
        "driver_epochs": 8,
        "driver_batch_size": 64,
        "advgan_epochs": 4,
        # "steer": the driver attack only has to change the steering decision
        "attack_groups": "steer",
        "retrain_epochs": 3,
        "bench_steps": 36000,
        "bench_cars": 12,
    },
}


def _merge(base, override, path=""):
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            _merge(base[key], value, where + ".")
        else:
            base[key] = _coerce(base[key], value, where)


def _coerce(default, value, where):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key {where!r} must be true or false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(value, bool):
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, list) and isinstance(value, list):
        return value
    elif isinstance(default, str) and isinstance(value, str):
        return value
    raise ConfigError(f"config key {where!r} expects {type(default).__name__}, got {value!r}")


def parse_set(item):
    """``a.b=value`` -> ({"a": {"b": value}}); values are parsed as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out = value
    for part in reversed(key.strip().split(".")):
        if not part:
            raise ConfigError(f"bad --set key {key!r}")
        out = {part: out}
    return out


def load_config(path=None, sets=(), seed=None):
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {p} must hold a JSON object")
        _merge(cfg, doc)
    for item in sets:
        _merge(cfg, parse_set(item))
    if seed is not None:
        cfg["seed"] = int(seed)
    validate(cfg)
    return cfg


def validate(cfg):
    def positive(section, *keys):
        for k in keys:
            if cfg[section][k] <= 0:
                raise ConfigError(f"{section}.{k} must be positive, got {cfg[section][k]}")

    def non_negative(section, *keys):
        for k in keys:
            if cfg[section][k] < 0:
                raise ConfigError(f"{section}.{k} must be >= 0, got {cfg[section][k]}")

    if not 0 <= cfg["seed"] < 2**64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {cfg['seed']}")
    positive("data", "class_count", "per_class", "size")
    if cfg["data"]["path"] is not None and not Path(cfg["data"]["path"]).is_file():
        raise ConfigError(f"dataset not found: {cfg['data']['path']}")
    fr = cfg["split"]
    if abs(fr["train"] + fr["val"] + fr["test"] - 1) > 1e-9 or min(fr.values()) < 0:
        raise ConfigError(f"split fractions must be non-negative and sum to 1, got {fr}")
    positive("classifier", "batch_size", "lr")
    non_negative("classifier", "epochs")
    positive("advgan", "batch_size", "lr_g", "lr_d")
    non_negative("advgan", "epochs", "alpha", "beta", "hinge_c", "kappa")
    if cfg["advgan"]["batch_size"] < 2:
        raise ConfigError("advgan.batch_size must be >= 2")
    if not 0 <= cfg["advgan"]["epsilon"] <= 1:
        raise ConfigError(f"advgan.epsilon must be in [0, 1], got {cfg['advgan']['epsilon']}")
    positive("retrain", "batch_size", "lr")
    non_negative("retrain", "epochs")
    if not 0 <= cfg["retrain"]["adv_fraction"] <= 1:
        raise ConfigError("retrain.adv_fraction must be in [0, 1]")
    sim = cfg["sim"]
    for k in ("collect_steps", "collect_cars", "driver_batch_size", "bench_steps", "bench_cars"):
        if sim[k] <= 0:
            raise ConfigError(f"sim.{k} must be positive, got {sim[k]}")
    for k in ("driver_epochs", "advgan_epochs", "retrain_epochs"):
        if sim[k] < 0:
            raise ConfigError(f"sim.{k} must be >= 0, got {sim[k]}")
    if sim["bench_steps"] % sim["bench_cars"]:
        raise ConfigError("sim.bench_steps must be a multiple of sim.bench_cars")
    if sim["attack_groups"] not in ATTACK_GROUPS:
        raise ConfigError(f"sim.attack_groups must be one of {ATTACK_GROUPS}, "
                          f"got {sim['attack_groups']!r}")
    if not sim["weathers"]:
        raise ConfigError("sim.weathers must not be empty")
    for w in sim["weathers"]:
        if not (isinstance(w, list) and len(w) == 2):
            raise ConfigError(f"each weather is [kind, intensity], got {w!r}")
    return cfg
