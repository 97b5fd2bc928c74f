"""Run configuration: JSON file + dotted-key overrides over defaults.

Precedence: command line > config file > defaults. The resolved snapshot is
embedded in every artifact a command writes.
"""

import copy
import json

from .errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "windowing": {
        "window": 400,
        "overlap": 25,
        "sequence_len": 8,
        "channels": 1,
        "fs": 250.0,
        "stride": None,  # defaults to window - overlap
    },
    "filter": {"kind": "none", "width": 1},
    "gen": {
        "trials": 35,
        "heldout": 5,
        "mu0": 0.2,
        "mu1": 1.0,
        "sigma": 0.05,
        "ripple_amp": 0.08,
        "ripple_hz": 35.0,
        "ripple_onset": 0.35,
        "fs": 250.0,
        "length": 9000,
        "base_durations": [4200, 1200, 2400, 1200],
        "duration_jitter": 0.2,
        "entry_ramp": None,
        "exit_ramp": None,
    },
    "extract": {
        "margin": 200,
        "steady_stride": 5,
        "steady_max_per_class": 750,
        "sequence_stride": 25,
        "sequence_max_per_class": 600,
    },
    "train": {
        "learning_rate": 1e-3,
        "batch_size": 32,
        "pretrain_epochs": 20,
        "epochs": 30,
        "val_fraction": 0.2,
        "normalize_scores": True,
        "freeze_upstream": False,
    },
    "simulate": {"stride": 25, "epsilon": 1.0, "match_horizon": 2.0},
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a section")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path=None):
    """Resolve the configuration from an optional JSON file over defaults."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        with open(path, "r") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return _merge(DEFAULTS, doc)


def apply_overrides(cfg, assignments):
    """Apply `section.key=value` strings; values parse as JSON, else string."""
    cfg = copy.deepcopy(cfg)
    for assignment in assignments or []:
        if "=" not in assignment:
            raise ConfigError(f"override must look like key.path=value: {assignment!r}")
        dotted, raw = assignment.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        keys = dotted.strip().split(".")
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise ConfigError(f"unknown config section {key!r} in {dotted!r}")
            node = node[key]
        leaf = keys[-1]
        if leaf not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(node[leaf], dict):
            raise ConfigError(f"{dotted!r} is a section, not a value")
        node[leaf] = value
    return cfg


def snapshot(cfg):
    """Deterministic JSON form for embedding into artifacts."""
    return json.loads(json.dumps(cfg, sort_keys=True))
