"""Experiment configuration: a JSON document with every default echoed back.

Unknown keys and out-of-range values are rejected with the dotted key path
in the message, e.g. ``model.mlp_dropout: must lie in [0, 1), got 1.5``.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .graphs import GraphConfig
from .model import DTYPES, MixingSchedule, TrainConfig

FORMAT_VERSION = 1

MODEL_NAMES = ("gcondnet-knn", "gcondnet-srd", "gcondnet-random",
               "mlp", "mlp-pca", "mlp-nmf", "mlp-wl")

DEFAULTS: dict = {
    "format_version": FORMAT_VERSION,
    "dataset": {"path": None, "label_column": -1},
    "graph": {"kind": "knn", "k": 5, "rel_dist": 0.05, "max_degree": 25, "mu": 0.08, "sigma": 0.03},
    "model": {"widths": [100, 100, 10], "gcn_widths": [200, 100], "mlp_dropout": 0.2,
              "gcn_dropout": 0.5, "leaky_slope": 0.01},
    "schedule": {"n_alpha": 200, "fixed_alpha": None},
    "train": {"max_steps": 10000, "batch_size": 8, "patience_steps": 200, "lr": 1e-4,
              "weight_decay": 0.0, "precision": "f32"},
    "split": {"folds": 5, "repeats": 5, "val_fraction": 0.1, "fold": 0},
    "bench": {"models": ["gcondnet-knn", "mlp"], "jobs": 1},
    "curves": {"alphas": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0], "decay": True},
    "output_dir": "runs",
    "seed": 0,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _check(cond: bool, key: str, msg: str, value) -> None:
    if not cond:
        raise ConfigError(f"{key}: {msg}, got {value!r}")


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def validate(cfg: dict, check_files: bool = True) -> dict:
    """Range and type checks; returns ``cfg`` unchanged."""
    _check(cfg["format_version"] == FORMAT_VERSION, "format_version", "unsupported version",
           cfg["format_version"])
    ds = cfg["dataset"]
    if check_files:
        _check(ds["path"] is not None, "dataset.path", "a dataset path is required", ds["path"])
        _check(Path(ds["path"]).is_file(), "dataset.path", "file not found", ds["path"])
    _check(isinstance(ds["label_column"], (int, str)) and not isinstance(ds["label_column"], bool),
           "dataset.label_column", "must be a column index or header name", ds["label_column"])

    g = cfg["graph"]
    _check(g["kind"] in ("knn", "srd", "random"), "graph.kind", "must be knn, srd or random", g["kind"])
    _check(_int(g["k"]) and g["k"] >= 1, "graph.k", "must be an integer >= 1", g["k"])
    _check(_num(g["rel_dist"]) and g["rel_dist"] >= 0, "graph.rel_dist", "must be >= 0", g["rel_dist"])
    _check(_int(g["max_degree"]) and g["max_degree"] >= 1, "graph.max_degree", "must be an integer >= 1",
           g["max_degree"])
    _check(_num(g["mu"]) and 0 <= g["mu"] <= 1, "graph.mu", "must lie in [0, 1]", g["mu"])
    _check(_num(g["sigma"]) and g["sigma"] >= 0, "graph.sigma", "must be >= 0", g["sigma"])

    m = cfg["model"]
    for key in ("widths", "gcn_widths"):
        v = m[key]
        _check(isinstance(v, list) and v and all(_int(w) and w >= 1 for w in v), f"model.{key}",
               "must be a non-empty list of positive integers", v)
    _check(len(m["gcn_widths"]) == 2, "model.gcn_widths", "must have two entries", m["gcn_widths"])
    _check(m["gcn_widths"][-1] == m["widths"][0], "model.gcn_widths",
           "last entry must equal the first MLP width", m["gcn_widths"])
    for key in ("mlp_dropout", "gcn_dropout"):
        _check(_num(m[key]) and 0 <= m[key] < 1, f"model.{key}", "must lie in [0, 1)", m[key])
    _check(_num(m["leaky_slope"]) and m["leaky_slope"] >= 0, "model.leaky_slope", "must be >= 0",
           m["leaky_slope"])

    s = cfg["schedule"]
    _check(_int(s["n_alpha"]) and s["n_alpha"] >= 0, "schedule.n_alpha", "must be an integer >= 0", s["n_alpha"])
    fa = s["fixed_alpha"]
    _check(fa is None or (_num(fa) and 0 <= fa <= 1), "schedule.fixed_alpha", "must be null or in [0, 1]", fa)

    t = cfg["train"]
    for key in ("max_steps", "batch_size", "patience_steps"):
        _check(_int(t[key]) and t[key] >= 1, f"train.{key}", "must be an integer >= 1", t[key])
    _check(t["batch_size"] >= 2, "train.batch_size", "must be >= 2 (batch norm)", t["batch_size"])
    _check(_num(t["lr"]) and t["lr"] > 0, "train.lr", "must be > 0", t["lr"])
    _check(_num(t["weight_decay"]) and t["weight_decay"] >= 0, "train.weight_decay", "must be >= 0",
           t["weight_decay"])
    _check(t["precision"] in DTYPES, "train.precision", f"must be one of {sorted(DTYPES)}", t["precision"])

    sp = cfg["split"]
    _check(_int(sp["folds"]) and sp["folds"] >= 2, "split.folds", "must be an integer >= 2", sp["folds"])
    _check(_int(sp["repeats"]) and sp["repeats"] >= 1, "split.repeats", "must be an integer >= 1", sp["repeats"])
    _check(_num(sp["val_fraction"]) and 0 < sp["val_fraction"] < 1, "split.val_fraction",
           "must lie in (0, 1)", sp["val_fraction"])
    _check(_int(sp["fold"]) and 0 <= sp["fold"] < sp["folds"], "split.fold", "must be in [0, folds)", sp["fold"])

    b = cfg["bench"]
    _check(isinstance(b["models"], list) and b["models"] and all(x in MODEL_NAMES for x in b["models"]),
           "bench.models", f"must be a non-empty list drawn from {list(MODEL_NAMES)}", b["models"])
    _check(len(set(b["models"])) == len(b["models"]), "bench.models", "must not repeat a model", b["models"])
    _check(_int(b["jobs"]) and b["jobs"] >= 1, "bench.jobs", "must be an integer >= 1", b["jobs"])

    c = cfg["curves"]
    _check(isinstance(c["alphas"], list) and all(_num(a) and 0 <= a <= 1 for a in c["alphas"]),
           "curves.alphas", "must be a list of values in [0, 1]", c["alphas"])
    _check(isinstance(c["decay"], bool), "curves.decay", "must be true or false", c["decay"])

    _check(isinstance(cfg["output_dir"], str) and cfg["output_dir"], "output_dir", "must be a path",
           cfg["output_dir"])
    _check(_int(cfg["seed"]) and cfg["seed"] >= 0, "seed", "must be an integer >= 0", cfg["seed"])
    return cfg


def resolve(overrides: dict | None = None, check_files: bool = True) -> dict:
    """Defaults merged with ``overrides`` and validated."""
    return validate(_merge(DEFAULTS, overrides or {}), check_files)


def parse_config(path, check_files: bool = True) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return resolve(doc, check_files)


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2)


# ---------------------------------------------------------------- typed views

def graph_config(cfg: dict) -> GraphConfig:
    return GraphConfig(**cfg["graph"])


def schedule(cfg: dict) -> MixingSchedule:
    s = cfg["schedule"]
    if s["fixed_alpha"] is not None:
        return MixingSchedule.fixed(float(s["fixed_alpha"]))
    return MixingSchedule(s["n_alpha"])


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(seed=cfg["seed"], **cfg["train"])
