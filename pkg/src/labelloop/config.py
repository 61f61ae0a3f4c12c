"""Run configuration: JSON file + dotted CLI overrides, unknown keys rejected.

The fully resolved config is echoed into every run directory so a run can be
reproduced from its own artifacts.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

STRATEGIES = (
    "SPL",
    "PPL_best",
    "PPL_worst",
    "RAND",
    "SCONF",
    "ENT",
    "SUPERVISED",
    "SOURCE_ONLY",
)


class ConfigError(ValueError):
    pass


@dataclass
class CountsConfig:
    source_train: int = 200
    source_val: int = 50
    target_train: int = 200
    target_val: int = 50


@dataclass
class ShiftConfig:
    hue_shift: float = 25.0
    brightness_delta: float = -0.12
    noise_sigma: float = 0.05
    texture_scale: float = 1.5


@dataclass
class DataConfig:
    root: str | None = None
    width: int = 64
    height: int = 64
    num_classes: int = 5
    seed: int = 7
    counts: CountsConfig = field(default_factory=CountsConfig)
    shift: ShiftConfig = field(default_factory=ShiftConfig)

    def resolve_root(self) -> Path:
        if self.root:
            return Path(self.root)
        return Path(os.environ.get("LABOR_DATA_DIR", "data"))


@dataclass
class OptimConfig:
    task_lr: float = 1e-2
    selector_lr: float = 1e-3
    momentum: float = 0.9
    # sparse-retrain phases may want a smaller step than source pretraining;
    # None falls back to task_lr
    retrain_lr: float | None = None


@dataclass
class EpochsConfig:
    pretrain: int = 30
    self_train: int = 5
    discrepancy: int = 5
    retrain: int = 20


@dataclass
class BudgetConfig:
    # segment baselines label ceil(fraction * W * H) pixels per stage;
    # point baselines label points_per_stage pixels per stage. baseline_mode
    # decides which budget RAND/SCONF/ENT consume.
    segment_fraction: float = 0.01
    points_per_stage: int = 5
    baseline_mode: str = "point"


@dataclass
class RunConfig:
    strategy: str = "SPL"
    stages: int = 3
    seed: int = 0
    tau: float = 0.9
    lambda_ent: float = 0.0
    inner_max_steps: int = 4
    out_dir: str = "results"
    run_id: str | None = None
    pretrained_checkpoint: str | None = None
    log_every: int = 1
    serve_port: int = 8321
    data: DataConfig = field(default_factory=DataConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    epochs: EpochsConfig = field(default_factory=EpochsConfig)
    budgets: BudgetConfig = field(default_factory=BudgetConfig)

    def validate(self) -> "RunConfig":
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.stages < 1:
            raise ConfigError("stages must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("tau must be in [0, 1]")
        if self.budgets.segment_fraction <= 0 or self.budgets.points_per_stage < 0:
            raise ConfigError("budgets must be positive")
        if self.budgets.baseline_mode not in ("point", "segment"):
            raise ConfigError("budgets.baseline_mode must be 'point' or 'segment'")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")
        return self

    def resolved_run_id(self) -> str:
        return self.run_id or f"{self.strategy}_seed{self.seed}"

    def run_dir(self) -> Path:
        return Path(self.out_dir) / self.resolved_run_id()

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, values: dict, path: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        where = path or cls.__name__
        raise ConfigError(f"unknown config key(s) under {where}: {sorted(unknown)}")
    kwargs = {}
    for name, value in values.items():
        ftype = known[name].type
        sub = _DATACLASS_FIELDS.get((cls, name))
        if sub is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"{path}.{name} must be an object")
            kwargs[name] = _build(sub, value, f"{path}.{name}" if path else name)
        else:
            kwargs[name] = value
    return cls(**kwargs)


_DATACLASS_FIELDS = {
    (RunConfig, "data"): DataConfig,
    (RunConfig, "optim"): OptimConfig,
    (RunConfig, "epochs"): EpochsConfig,
    (RunConfig, "budgets"): BudgetConfig,
    (DataConfig, "counts"): CountsConfig,
    (DataConfig, "shift"): ShiftConfig,
}


def config_from_dict(values: dict) -> RunConfig:
    return _build(RunConfig, copy.deepcopy(values), "").validate()


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Config file (JSON, optional) plus `key.path=value` overrides."""
    values: dict = {}
    if path is not None:
        values = json.loads(Path(path).read_text())
        if not isinstance(values, dict):
            raise ConfigError(f"{path} must contain a JSON object")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = values
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends through a non-object")
        node[parts[-1]] = value
    return config_from_dict(values)


def write_effective_config(config: RunConfig, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "config.json"
    path.write_text(json.dumps(config.to_dict(), sort_keys=True, indent=1))
    return path
