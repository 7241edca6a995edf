"""Run configuration shared by the training loop, comparisons and the CLI."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .datasets import DATASET_KINDS
from .schedules import Schedule, schedule_from_dict
from .weighting import WeightStrategy, strategy_from_dict

PREDICT_TARGETS = ("epsilon", "x0", "v")


class ConfigError(ValueError):
    """Invalid or incomplete run configuration; ``field`` names the culprit."""

    def __init__(self, message: str, field_name: str | None = None):
        super().__init__(message)
        self.field = field_name


@dataclass(frozen=True)
class RunConfig:
    schedule: Schedule
    weighting: WeightStrategy
    target: str
    dataset_kind: str
    dataset_n: int
    dataset_seed: int
    iterations: int
    batch: int = 256
    lr: float = 1e-4
    seed: int = 0
    hidden: int = 128
    freq_pairs: int = 16
    sampler_steps: int = 50
    t_max: float = 0.99
    eval_every: int | None = None
    n_eval: int = 4096
    log_every: int = 100

    def __post_init__(self):
        if self.target not in PREDICT_TARGETS:
            raise ConfigError(
                f"target must be one of {PREDICT_TARGETS}, got {self.target!r}",
                "target",
            )
        if self.dataset_kind not in DATASET_KINDS:
            raise ConfigError(
                f"dataset kind must be one of {DATASET_KINDS}, got {self.dataset_kind!r}",
                "dataset.kind",
            )
        if self.dataset_n < 1:
            raise ConfigError("dataset.n must be >= 1", "dataset.n")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1", "iterations")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1", "batch")
        if not self.lr > 0.0:
            raise ConfigError("lr must be > 0", "lr")
        if self.sampler_steps < 1:
            raise ConfigError("sampler_steps must be >= 1", "sampler_steps")
        if not 0.0 < self.t_max <= 1.0:
            raise ConfigError("t_max must lie in (0, 1]", "t_max")
        if self.eval_every is not None and self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1", "eval_every")
        if self.n_eval < 0:
            raise ConfigError("n_eval must be >= 0", "n_eval")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1", "log_every")

    def to_dict(self) -> dict:
        return {
            "schedule": self.schedule.to_dict(),
            "weighting": self.weighting.to_dict(),
            "target": self.target,
            "dataset": {
                "kind": self.dataset_kind,
                "n": self.dataset_n,
                "seed": self.dataset_seed,
            },
            "iterations": self.iterations,
            "batch": self.batch,
            "lr": self.lr,
            "seed": self.seed,
            "hidden": self.hidden,
            "freq_pairs": self.freq_pairs,
            "sampler_steps": self.sampler_steps,
            "t_max": self.t_max,
            "eval_every": self.eval_every,
            "n_eval": self.n_eval,
            "log_every": self.log_every,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


_REQUIRED = ("schedule", "weighting", "target", "dataset", "iterations")
_OPTIONAL_DEFAULTS = {
    "batch": 256,
    "lr": 1e-4,
    "seed": 0,
    "hidden": 128,
    "freq_pairs": 16,
    "sampler_steps": 50,
    "t_max": 0.99,
    "eval_every": None,
    "n_eval": 4096,
    "log_every": 100,
}


def run_config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError(f"run config must be an object, got {type(d).__name__}")
    for key in _REQUIRED:
        if key not in d:
            raise ConfigError(f"missing required config field {key!r}", key)
    unknown = set(d) - set(_REQUIRED) - set(_OPTIONAL_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}", sorted(unknown)[0])
    dataset = d["dataset"]
    if not isinstance(dataset, dict):
        raise ConfigError("dataset must be an object", "dataset")
    for key in ("kind", "n", "seed"):
        if key not in dataset:
            raise ConfigError(f"missing required config field 'dataset.{key}'", f"dataset.{key}")
    unknown = set(dataset) - {"kind", "n", "seed"}
    if unknown:
        raise ConfigError(f"unknown dataset fields: {sorted(unknown)}", "dataset")
    try:
        schedule = schedule_from_dict(d["schedule"])
    except ValueError as e:
        raise ConfigError(f"invalid schedule: {e}", "schedule") from e
    try:
        weighting = strategy_from_dict(d["weighting"])
    except ValueError as e:
        raise ConfigError(f"invalid weighting: {e}", "weighting") from e
    kwargs = {k: d.get(k, v) for k, v in _OPTIONAL_DEFAULTS.items()}
    return RunConfig(
        schedule=schedule,
        weighting=weighting,
        target=d["target"],
        dataset_kind=dataset["kind"],
        dataset_n=int(dataset["n"]),
        dataset_seed=int(dataset["seed"]),
        iterations=int(d["iterations"]),
        **kwargs,
    )


def run_config_from_json(s: str) -> RunConfig:
    return run_config_from_dict(json.loads(s))
