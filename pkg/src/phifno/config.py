"""Run configuration: one JSON document merged over documented defaults.

Unknown keys are errors. ``resolve`` returns the full configuration, which
every command writes to its output directory as ``config.json``.
"""
import copy
import json

from .dataset import GENERATORS, GenerationSpec
from .fno import FnoHyperparams
from .geometry import DEFAULT_RANGES, SamplerRanges
from .phifem import SOLVER_TOL
from .training import LOSS_MODES, TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "deterministic": False,
    "out": "run",
    "data": {
        "path": "data",
        "generator": "ellipse",
        "n_samples": 2100,
        "nx": 64,
        "ny": 64,
        "sigma_D": 1.0,
        "margin": None,
        "workers": 1,
        "ranges": DEFAULT_RANGES.to_dict(),
    },
    "split": {"train": 1500, "val": 300, "test": 300},
    "model": {
        "n_d": 20,
        "modes": 10,
        "n_Q": 128,
        "pad": 8,
        "pad_per_layer": False,
        "predict_u": False,
    },
    "train": {
        "epochs": 2000,
        "batch_size": 32,
        "lr": 5e-4,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-7,
        "l2_lambda": 0.0,
        "weight_decay": 0.0,
        "loss_mode": "full_h1",
        "scheduler": {"factor": 0.5, "patience": 40, "min_lr": 1e-6, "threshold": 1e-4},
        "train_subset": 300,
        "checkpoint_every": 100,
        "resume": None,
    },
    "evaluate": {
        "checkpoints": [],
        "dataset": None,
        "split": "test",
        "hausdorff": False,
    },
    "convergence": {
        "case": "sine",
        "domain": {"kind": "disk", "x0": 0.5, "y0": 0.5, "lx": 0.3, "ly": 0.3, "theta": 0.0},
        "resolutions": [17, 33, 65, 129],
        "sigma_D": 1.0,
    },
    "predict": {"checkpoint": None, "dataset": None, "index": 0, "inputs": None},
    "solver": {"tol": SOLVER_TOL},
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown configuration key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _ranges(cfg):
    r = dict(cfg["data"]["ranges"])
    try:
        return SamplerRanges(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in r.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"data.ranges: {exc}") from exc


def validate(cfg):
    d = cfg["data"]
    if d["generator"] not in GENERATORS:
        raise ConfigError(f"data.generator must be one of {GENERATORS}")
    for key in ("n_samples", "nx", "ny", "workers"):
        if not isinstance(d[key], int) or d[key] < 1:
            raise ConfigError(f"data.{key} must be a positive integer")
    if d["margin"] is not None and not 0 <= d["margin"] < 0.2:
        raise ConfigError("data.margin must lie in [0, 0.2)")
    _ranges(cfg)
    try:
        spec = generation_spec(cfg)
        if spec.generator == "ellipse" and not spec.box_margin < 0.2:
            raise ConfigError(f"ellipse margin {spec.box_margin:.3g} must be < 0.2 (grid too coarse?)")
        hyperparams(cfg)
        train_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if any(not isinstance(v, int) or v < 0 for v in cfg["split"].values()):
        raise ConfigError("split sizes must be non-negative integers")
    if cfg["train"]["loss_mode"] not in LOSS_MODES:
        raise ConfigError(f"train.loss_mode must be one of {LOSS_MODES}")
    if cfg["evaluate"]["split"] not in ("train", "val", "test", "all"):
        raise ConfigError("evaluate.split must be train, val, test or all")
    conv = cfg["convergence"]
    if conv["case"] not in ("sine", "affine"):
        raise ConfigError("convergence.case must be 'sine' or 'affine'")
    if conv["domain"].get("kind") not in ("disk", "ellipse"):
        raise ConfigError("convergence.domain.kind must be 'disk' or 'ellipse'")
    res = conv["resolutions"]
    if len(res) < 3 or any(b <= a for a, b in zip(res, res[1:])) or min(res) < 3:
        raise ConfigError("convergence.resolutions must be >= 3 strictly increasing sizes >= 3")
    if not cfg["solver"]["tol"] > 0:
        raise ConfigError("solver.tol must be positive")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    return cfg


def resolve(user=None, seed=None, out=None, deterministic=None):
    cfg = _merge(DEFAULTS, user or {})
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["out"] = str(out)
    if deterministic is not None:
        cfg["deterministic"] = bool(deterministic) or cfg["deterministic"]
    return validate(cfg)


def load(path):
    try:
        with open(path) as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: the configuration must be a JSON object")
    return user


def generation_spec(cfg):
    d = cfg["data"]
    return GenerationSpec(
        d["generator"], d["nx"], d["ny"], cfg["seed"], d["sigma_D"], d["margin"], _ranges(cfg),
        cfg["solver"]["tol"],
    )


def hyperparams(cfg):
    return FnoHyperparams(**cfg["model"])


def train_config(cfg):
    t = dict(cfg["train"])
    sched = t.pop("scheduler")
    t.pop("resume")
    return TrainConfig(**t, **sched, seed=cfg["seed"])


def dumps(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True)
