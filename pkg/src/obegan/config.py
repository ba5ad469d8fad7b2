"""File-backed experiment configuration.

A YAML file of nested sections, deep-merged over the published defaults.
Unknown keys are rejected with their dotted path; command-line overrides use
the same dotted paths (``--set weights.lambda=0.5``). The resolved config is
echoed verbatim into each run directory for provenance.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError
from .losses import LossWeights
from .training import TrainConfig

DEFAULTS: dict = {
    "run": {"out": None, "seed": 0, "checkpoint_every": 500},
    "data": {"dataset": "dsprites", "path": None},
    "model": {
        "d": 60,
        "k": 5,
        "side": 64,
        "channels": 1,
        "width": 32,
        "encoder_hidden": 64,
        "basis_mode": "learned",
        "assignment": "diagonal",
        "explicit_indices": None,
        "basis_init_noise": 0.01,
    },
    "train": {
        "lr": 0.0009,
        "beta1": 0.5,
        "beta2": 0.999,
        "batch": 64,
        "iters": 1000,
        "epsilon": 0.2,
        "inner_max_iters": 500,
        "inner_lr": None,
    },
    "weights": {"lambda": 0.9, "gamma": 1.1, "alpha": 1.0, "k_gp": 2.0, "p_gp": 1.0},
    "ablation": {"obe_off": False, "alternating_off": False, "infogan_term_off": False},
    "metrics": {
        "factorvae_votes": 800,
        "factorvae_eval_votes": 100,
        "factorvae_batch": 64,
        "mig_bins": 20,
        "mig_samples": 10000,
        "sap_samples": 10000,
        "vp_pairs": 2000,
        "vp_train_ratio": 0.1,
        "vp_epochs": 200,
        "representation": "auto",  # auto | obe | encoder
    },
}


def _merge_checked(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        dotted = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown configuration key: {dotted}")
        if isinstance(base[key], dict) and base[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted} must be a mapping")
            out[key] = _merge_checked(base[key], value, dotted + ".")
        else:
            out[key] = value
    return out


@dataclass
class ExperimentConfig:
    raw: dict

    def __getitem__(self, section: str) -> dict:
        return self.raw[section]

    @property
    def seed(self) -> int:
        return int(self.raw["run"]["seed"])

    def train_config(self) -> TrainConfig:
        m, t, w, a = (self.raw[s] for s in ("model", "train", "weights", "ablation"))
        explicit = m["explicit_indices"]
        if explicit is not None:
            explicit = tuple(tuple(ij) for ij in explicit)
        return TrainConfig(
            weights=LossWeights(
                lam=float(w["lambda"]),
                gamma=float(w["gamma"]),
                alpha=float(w["alpha"]),
                k_gp=float(w["k_gp"]),
                p_gp=float(w["p_gp"]),
            ),
            epsilon=float(t["epsilon"]),
            lr=float(t["lr"]),
            beta1=float(t["beta1"]),
            beta2=float(t["beta2"]),
            batch=int(t["batch"]),
            iters=int(t["iters"]),
            d=int(m["d"]),
            k=int(m["k"]),
            side=int(m["side"]),
            channels=int(m["channels"]),
            width=int(m["width"]),
            encoder_hidden=int(m["encoder_hidden"]),
            basis_mode=str(m["basis_mode"]),
            assignment=str(m["assignment"]),
            explicit_indices=explicit,
            basis_init_noise=float(m["basis_init_noise"]),
            inner_max_iters=int(t["inner_max_iters"]),
            inner_lr=None if t["inner_lr"] is None else float(t["inner_lr"]),
            seed=self.seed,
            obe_off=bool(a["obe_off"]),
            alternating_off=bool(a["alternating_off"]),
            infogan_term_off=bool(a["infogan_term_off"]),
        )

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=False)


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a mapping")
    cfg = ExperimentConfig(raw=_merge_checked(DEFAULTS, data))
    cfg.train_config()  # validate eagerly (lambda range, modes, ...)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    return from_dict(data)


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply repeatable ``key.path=value`` overrides; values parse as YAML."""
    raw = copy.deepcopy(cfg.raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key.path=value, got {item!r}")
        dotted, value_text = item.split("=", 1)
        keys = dotted.strip().split(".")
        try:
            value = yaml.safe_load(value_text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {value_text!r}: {exc}") from exc
        node = raw
        for key in keys[:-1]:
            if not isinstance(node.get(key), dict):
                raise ConfigError(f"unknown configuration key: {dotted}")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigError(f"unknown configuration key: {dotted}")
        node[keys[-1]] = value
    return from_dict(raw)
