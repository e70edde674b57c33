"""Flat JSON run configuration: backbone + model + optimizer + data keys."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping

from ..backbone import BackboneConfig
from .data import CAPTION_POLICIES, DEFAULT_MIX
from .model import ModelConfig
from .optim import OptimizerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 192
    n_val: int = 96
    caption_policy: str = "structured"
    condition_mix: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_MIX))

    def __post_init__(self):
        if self.caption_policy not in CAPTION_POLICIES:
            raise ConfigError(f"caption_policy must be one of {CAPTION_POLICIES}")
        if self.n_train < 1 or self.n_val < 1:
            raise ConfigError("n_train and n_val must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {}
        out.update(dataclasses.asdict(self.model.backbone))
        out.update({k: v for k, v in dataclasses.asdict(self.model).items() if k != "backbone"})
        out.update(dataclasses.asdict(self.optim))
        d = dataclasses.asdict(self.data)
        d["condition_mix"] = dict(d["condition_mix"])
        out.update(d)
        return out

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "RunConfig":
        groups = {
            "backbone": {f.name for f in dataclasses.fields(BackboneConfig)},
            "model": {f.name for f in dataclasses.fields(ModelConfig)} - {"backbone"},
            "optim": {f.name for f in dataclasses.fields(OptimizerConfig)},
            "data": {f.name for f in dataclasses.fields(DataConfig)},
        }
        known = set().union(*groups.values())
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        pick = {g: {k: raw[k] for k in names if k in raw} for g, names in groups.items()}
        try:
            backbone = BackboneConfig(**pick["backbone"])
            model = ModelConfig(backbone=backbone, **pick["model"])
            optim = OptimizerConfig(**pick["optim"])
            data = DataConfig(**pick["data"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(model, optim, data)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(raw)

    def replace(self, **flat) -> "RunConfig":
        merged = self.to_dict()
        merged.update(flat)
        return RunConfig.from_dict(merged)
