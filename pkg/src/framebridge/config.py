"""Run configuration: one TOML file with fixed sections, validated before any work.

Every key has a default, so an empty file is a valid config. Unknown sections
or keys are rejected. :func:`config_hash` digests the fully resolved config,
which is what stamps run directories and reports.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .sampler import SampleConfig
from .schedule import BridgeGmaxSchedule, VPSchedule
from .toy_world import ToyConfig
from .train import TrainConfig

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "config_hash", "DEFAULTS"]


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict] = {
    "data": {"L": 8, "d": 16, "C": 3, "width": 1.5, "velocities": [[0], [1], [1, -1]],
             "seed": 0, "n_clips": 1024},
    "schedule": {"T": 1.0, "beta0": 0.01, "beta1": 50.0, "teacher_beta_min": 0.1, "teacher_beta_max": 20.0},
    "model": {"hidden": 128, "time_dim": 16, "class_dim": 8},
    "train": {"iterations": 2000, "batch_size": 64, "lr": 1e-3, "seed": 0, "eps_t": 1e-4,
              "eval_every": 100, "eval_clips": 128, "eval_seed": 2024, "loss_weight": 1.0,
              "prior": "replicated", "prior_checkpoint": "", "checkpoint_every": 0},
    "saf": {"enabled": True, "teacher_checkpoint": "", "output_mode": "eps", "clamp": True,
            "teacher_steps": 0},
    "sample": {"mode": "bridge", "checkpoint": "", "steps": 200, "eps_t": 1e-4, "seed": 0,
               "final_noise": False, "n_samples": 64, "csv": False},
    "eval": {"n_samples": 128, "seed": 7},
}

_PATH_KEYS = {("train", "prior_checkpoint"), ("saf", "teacher_checkpoint"), ("sample", "checkpoint")}
_CHOICES = {("train", "prior"): {"replicated", "neural"},
            ("saf", "output_mode"): {"eps", "v"},
            ("sample", "mode"): {"bridge", "bridge_saf", "diffusion"}}


def _type_ok(default, value) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, type(default))


@dataclass(frozen=True)
class RunConfig:
    """Resolved config; ``values`` maps section -> key -> value."""

    values: dict
    source: Path | None = None

    def section(self, name: str) -> dict:
        return self.values[name]

    @property
    def hash(self) -> str:
        return config_hash(self.values)

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        values = copy.deepcopy(self.values)
        for sec in ("data", "train", "sample"):
            values[sec]["seed"] = int(seed)
        return RunConfig(values, self.source)

    def toy(self) -> ToyConfig:
        d = self.values["data"]
        return ToyConfig(L=d["L"], d=d["d"], C=d["C"], width=float(d["width"]),
                         velocities=tuple(tuple(v) for v in d["velocities"]))

    def bridge_schedule(self) -> BridgeGmaxSchedule:
        s = self.values["schedule"]
        return BridgeGmaxSchedule(beta0=float(s["beta0"]), beta1=float(s["beta1"]), T=float(s["T"]))

    def teacher_schedule(self) -> VPSchedule:
        s = self.values["schedule"]
        return VPSchedule(beta_min=float(s["teacher_beta_min"]), beta_max=float(s["teacher_beta_max"]),
                          T=float(s["T"]))

    def train_config(self) -> TrainConfig:
        t = self.values["train"]
        return TrainConfig(iterations=t["iterations"], batch_size=t["batch_size"], lr=float(t["lr"]),
                           seed=t["seed"], eps_t=float(t["eps_t"]), eval_every=t["eval_every"],
                           eval_clips=t["eval_clips"], eval_seed=t["eval_seed"],
                           loss_weight=float(t["loss_weight"]))

    def sample_config(self, steps: int | None = None) -> SampleConfig:
        s = self.values["sample"]
        return SampleConfig(steps=steps or s["steps"], eps_t=float(s["eps_t"]), seed=s["seed"],
                            final_noise=s["final_noise"])

    def path(self, section: str, key: str) -> Path | None:
        raw = self.values[section][key]
        if not raw:
            return None
        p = Path(raw)
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p


def config_hash(values: dict) -> str:
    canon = json.dumps(values, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def parse_config(doc: dict, source: Path | None = None) -> RunConfig:
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    values = copy.deepcopy(DEFAULTS)
    for sec, entries in doc.items():
        if not isinstance(entries, dict):
            raise ConfigError(f"[{sec}] must be a table")
        for key, value in entries.items():
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"unknown key {sec}.{key}")
            if not _type_ok(DEFAULTS[sec][key], value):
                raise ConfigError(f"{sec}.{key} has wrong type {type(value).__name__}")
            choices = _CHOICES.get((sec, key))
            if choices is not None and value not in choices:
                raise ConfigError(f"{sec}.{key} must be one of {sorted(choices)}, got {value!r}")
            values[sec][key] = value
    cfg = RunConfig(values, source)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    try:
        cfg.toy()
        cfg.bridge_schedule()
        cfg.teacher_schedule()
        cfg.train_config()
        cfg.sample_config()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    v = cfg.values
    if v["data"]["n_clips"] < 1 or v["eval"]["n_samples"] < 1 or v["sample"]["n_samples"] < 1:
        raise ConfigError("clip and sample counts must be positive")
    if min(v["model"]["hidden"], v["model"]["class_dim"]) < 1 or v["model"]["time_dim"] < 2 \
            or v["model"]["time_dim"] % 2:
        raise ConfigError("model sizes must be positive and time_dim even")
    every = v["train"]["checkpoint_every"]
    if every < 0 or (every and every % v["train"]["eval_every"]):
        raise ConfigError("train.checkpoint_every must be 0 or a multiple of train.eval_every")
    if v["saf"]["teacher_steps"] < 0:
        raise ConfigError("saf.teacher_steps must be >= 0")


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc, source=path.resolve())
