"""INI-style experiment configuration with command-line overrides.

A config file has sections whose keys map onto the dotted names used by
the command line, e.g. ``[attack] epsilon = 0.0313`` is ``attack.epsilon``.
Values are parsed as JSON when possible (numbers, booleans, lists) and kept
as strings otherwise.
"""
from __future__ import annotations

import configparser
import copy
import json

from .errors import ConfigError

DEFAULTS = {
    "data": {
        "source": "digits",  # digits | idx | csv
        "train_images": "",
        "train_labels": "",
        "test_images": "",
        "test_labels": "",
        "train_csv": "",
        "test_csv": "",
        "height": 8,
        "width": 8,
        "split_seed": 0,
    },
    "graph": {"radius": 2, "weight_rule": "constant", "floor": 1e-6},
    "model": {"hidden": [64, 64], "head": "softmax", "init_seed": 0},
    "train": {
        "objective": "plain",
        "batch_size": 128,
        "epochs": 60,
        "lr": 0.1,
        "lr_decay": {"30": 0.1, "45": 0.1},
        "momentum": 0.9,
        "weight_decay": 1e-4,
        "noise_eta": 0.0,
        "seed": 0,
    },
    "regularizer": {
        "metric": "wasserstein",
        "strength": 0.0,
        "loss": "cross_entropy",
        "penalty_target": "loss_gradient",
        "include_laplacian": False,
        "laplacian_variant": "modified",
    },
    "attack": {
        "kind": "fgsm",
        "epsilon": 8 / 255,
        "alpha": 2 / 255,
        "steps": 20,
        "norm_domain": "linf",
    },
    "translate": {"direction": "horizontal", "max_shift": 4, "sample_count": 1000, "seed": 0},
    "expansion": {
        "etas": [0.04, 0.02, 0.01],
        "draws": 100000,
        "height": 3,
        "width": 3,
        "hidden": [16, 16],
        "model": "mlp",  # mlp | linear
        "loss": "square",
        "seed": 0,
    },
    "run": {"seed": 0, "out": "out", "checkpoint": ""},
}

# command-line flag -> dotted config key
FLAG_KEYS = {
    "seed": "run.seed",
    "out": "run.out",
    "metric": "regularizer.metric",
    "strength": "regularizer.strength",
    "radius": "graph.radius",
    "attack": "attack.kind",
    "epsilon": "attack.epsilon",
    "alpha": "attack.alpha",
    "steps": "attack.steps",
}

METRIC_ALIASES = {"euclid": "euclidean", "wass": "wasserstein"}


def _parse(value):
    try:
        return json.loads(value)
    except (json.JSONDecodeError, TypeError):
        return value


def load_config(path=None, overrides=None):
    """Defaults, then the file at ``path``, then ``overrides`` (dotted keys)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        for section in parser.sections():
            if section not in cfg:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in cfg[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                cfg[section][key] = _parse(raw)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        set_key(cfg, dotted, value)
    metric = cfg["regularizer"]["metric"]
    cfg["regularizer"]["metric"] = METRIC_ALIASES.get(metric, metric)
    return cfg


def set_key(cfg, dotted, value):
    section, _, key = dotted.partition(".")
    if section not in cfg or key not in cfg[section]:
        raise ConfigError(f"unknown config key {dotted}")
    cfg[section][key] = value


def seed_everything(cfg):
    """Propagate ``run.seed`` into the per-stage seeds that were left at their defaults."""
    s = int(cfg["run"]["seed"])
    for section, key in (("train", "seed"), ("model", "init_seed"), ("expansion", "seed")):
        if cfg[section][key] == DEFAULTS[section][key]:
            cfg[section][key] = s
    return cfg
