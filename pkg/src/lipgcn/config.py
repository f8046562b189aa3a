"""Experiment configuration: defaults, file loading, dotted overrides, hashing.

A configuration is a nested dict (JSON on disk). Every CLI run resolves
defaults <- file <- --set overrides, writes the resolved snapshot next to its
outputs, and stamps reports/checkpoints with a hash of that snapshot.
"""

import copy
import hashlib
import json

from .backend import BackendConfig
from .dataio import canonical_json, read_json
from .errors import ConfigError
from .frontend import FrontendConfig
from .synth import SynthConfig


def default_config():
    return {
        "dataset": {
            "classes": 10,
            "speakers": 12,
            "train_speakers": 8,
            "clips_per": 30,
            "frames": 29,
            "frame_size": 16,
            "val_fraction": 0.05,
            "seed": 0,
        },
        "model": {
            "dyn_channels": 8,
            "visual_dim": 64,
            "dyn_kernel": [3, 5, 5],
            "visual_channels": [8, 16],
            "branch_layers": 2,
            "use_dag": True,
            "use_lcg": True,
            "use_sag": True,
            "fusion_mode": "composite",
            "merge_mode": "sum",
            "smoothing": 0.1,
            "backend": {"dilations": [1, 2, 4], "kernel": 3, "hidden": 64},
        },
        "train": {
            "lr": 3e-3,
            "weight_decay": 1e-4,
            "beta1": 0.9,
            "beta2": 0.999,
            "eps": 1e-8,
            "batch_size": 16,
            "epochs": 30,
            "seed": 0,
            "resource_mode": "low",
            "augment": {"flip_p": 0.5, "mask_max_len": 7},
        },
        "eval": {"batch_size": 64, "seed": 0},
        "robust": {"noise_sigma": 0.05, "jitter_sigma": 0.5},
    }


def _deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key in out and isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def apply_override(cfg, dotted):
    """Apply one ``a.b.c=value`` override; values parse as JSON, else string."""
    if "=" not in dotted:
        raise ConfigError(f"override {dotted!r} is not of the form key.path=value")
    keypath, raw = dotted.split("=", 1)
    keys = keypath.strip().split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise ConfigError(f"override {dotted!r}: no config section {key!r}")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError(f"override {dotted!r}: unknown config key {keys[-1]!r}")
    node[keys[-1]] = value
    return cfg


def resolve_config(path=None, overrides=(), seed=None, seed_key="train.seed"):
    """defaults <- file <- --set overrides <- --seed (applied at seed_key)."""
    cfg = default_config()
    if path is not None:
        loaded = read_json(path)
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        cfg = _deep_merge(cfg, loaded)
    for dotted in overrides:
        apply_override(cfg, dotted)
    if seed is not None:
        apply_override(cfg, f"{seed_key}={int(seed)}")
    validate_config(cfg)
    return cfg


def config_hash(cfg):
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()[:16]


def enabled_graphs(model_cfg):
    order = [("lcg", "use_lcg"), ("dag", "use_dag"), ("sag", "use_sag")]
    return tuple(name for name, flag in order if model_cfg.get(flag))


def validate_config(cfg):
    synth_config(cfg)  # validates dataset section
    model = cfg["model"]
    frontend_config(cfg)
    backend_config(cfg)
    graphs = enabled_graphs(model)
    mode = model["fusion_mode"]
    if len(graphs) >= 2:
        need = {2: ("cat2", "sum2"), 3: ("cat3", "wsum3", "composite")}[len(graphs)]
        if mode not in need:
            raise ConfigError(
                f"fusion mode {mode!r} incompatible with {len(graphs)} enabled graphs; "
                f"pick one of {need}"
            )
    if model["merge_mode"] not in ("sum", "cat"):
        raise ConfigError(f"merge_mode must be 'sum' or 'cat', got {model['merge_mode']!r}")
    train = cfg["train"]
    if train["epochs"] < 1 or train["batch_size"] < 1:
        raise ConfigError("train.epochs and train.batch_size must be >= 1")
    if train["resource_mode"] not in ("low", "high"):
        raise ConfigError(f"resource_mode must be 'low' or 'high', got {train['resource_mode']!r}")
    if cfg["robust"]["noise_sigma"] < 0 or cfg["robust"]["jitter_sigma"] < 0:
        raise ConfigError("robustness sigmas must be >= 0")
    return cfg


# typed views ----------------------------------------------------------------


def synth_config(cfg):
    d = cfg["dataset"]
    return SynthConfig(
        classes=d["classes"],
        speakers=d["speakers"],
        train_speakers=d["train_speakers"],
        clips_per=d["clips_per"],
        frames=d["frames"],
        frame_size=d["frame_size"],
        val_fraction=d["val_fraction"],
        seed=d["seed"],
    )


def frontend_config(cfg):
    m = cfg["model"]
    return FrontendConfig(
        dyn_channels=m["dyn_channels"],
        visual_dim=m["visual_dim"],
        frame_size=cfg["dataset"]["frame_size"],
        dyn_kernel=tuple(m["dyn_kernel"]),
        visual_channels=tuple(m["visual_channels"]),
    )


def backend_config(cfg):
    m = cfg["model"]
    return BackendConfig(
        dilations=tuple(m["backend"]["dilations"]),
        kernel=m["backend"]["kernel"],
        classes=cfg["dataset"]["classes"],
        smoothing=m["smoothing"],
        hidden=m["backend"]["hidden"],
    )
