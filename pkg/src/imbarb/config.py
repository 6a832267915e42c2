"""Run configuration: one JSON document covering every pipeline stage.

Defaults follow the reference experimental setup (full-scale training
sizes); desk-scale runs override the handful of fields that control cost.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from imbarb.agents import TrainConfig
from imbarb.battery_env import BatteryParams
from imbarb.correction.constraints import ConstraintConfig
from imbarb.correction.distill import DistillOptions
from imbarb.correction.verify import GridSpec


@dataclass(frozen=True)
class DistillSettings:
    """Distillation stage settings (options hold the desk-scale knobs)."""

    epochs: int = 600
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    initial_soc: float = 0.5
    battery: BatteryParams = field(default_factory=BatteryParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    constraints: ConstraintConfig = field(default_factory=ConstraintConfig)
    distill: DistillSettings = field(default_factory=DistillSettings)
    distill_options: DistillOptions = field(default_factory=DistillOptions)
    grid: GridSpec = field(default_factory=GridSpec)
    rbc_thresholds: tuple[float, float] | None = None

    def with_seed(self, seed: int) -> "RunConfig":
        doc = config_to_dict(self)
        doc["seed"] = seed
        doc["train"]["seed"] = seed
        return config_from_dict(doc)


def _plain(dc) -> dict:
    doc = asdict(dc)
    for key, value in doc.items():
        if isinstance(value, tuple):
            doc[key] = list(value)
    return doc


def config_to_dict(config: RunConfig) -> dict:
    distill_options = _plain(config.distill_options)
    distill_options["probe_grid"] = config.distill_options.probe_grid.to_dict()
    return {
        "seed": config.seed,
        "initial_soc": config.initial_soc,
        "battery": _plain(config.battery),
        "train": _plain(config.train),
        "constraints": config.constraints.to_dict(),
        "distill": _plain(config.distill),
        "distill_options": distill_options,
        "grid": config.grid.to_dict(),
        "rbc_thresholds": list(config.rbc_thresholds) if config.rbc_thresholds else None,
    }


def _load_dataclass(cls, doc: dict, tuple_fields: tuple[str, ...] = ()):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = dict(doc)
    for name in tuple_fields:
        if name in kwargs and kwargs[name] is not None:
            kwargs[name] = tuple(kwargs[name])
    return cls(**kwargs)


def config_from_dict(doc: dict) -> RunConfig:
    doc = dict(doc)
    distill_options = dict(doc.pop("distill_options", {}))
    if "probe_grid" in distill_options:
        distill_options["probe_grid"] = GridSpec.from_dict(distill_options["probe_grid"])
    for name in ("student_hidden", "lattice_price", "lattice_soc"):
        if name in distill_options:
            distill_options[name] = tuple(distill_options[name])
    thresholds = doc.pop("rbc_thresholds", None)
    return RunConfig(
        seed=int(doc.pop("seed", 0)),
        initial_soc=float(doc.pop("initial_soc", 0.5)),
        battery=_load_dataclass(BatteryParams, doc.pop("battery", {})),
        train=_load_dataclass(TrainConfig, doc.pop("train", {}), tuple_fields=("hidden_dims",)),
        constraints=_load_dataclass(ConstraintConfig, doc.pop("constraints", {})),
        distill=_load_dataclass(DistillSettings, doc.pop("distill", {})),
        distill_options=_load_dataclass(DistillOptions, distill_options),
        grid=GridSpec.from_dict(doc.pop("grid", GridSpec().to_dict())),
        rbc_thresholds=tuple(thresholds) if thresholds else None,
        **_reject_unknown(doc),
    )


def _reject_unknown(doc: dict) -> dict:
    if doc:
        raise ValueError(f"unknown config keys: {sorted(doc)}")
    return {}


def dump_config(config: RunConfig) -> str:
    return json.dumps(config_to_dict(config), indent=1, sort_keys=True)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))
