"""Saving and restoring trained models with their run config and partition."""

from __future__ import annotations

from typing import Tuple

from ..checkpoint import Checkpoint, CheckpointError, load_checkpoint, load_into, save_checkpoint
from .config import RunConfig
from .model import SLGNet
from .partition import ParamPartition, apply_partition, partition


def save_model(path, model: SLGNet, part: ParamPartition, cfg: RunConfig, mode: str) -> None:
    params = {name: p.data for name, p in model.named_parameters()}
    meta = {"mode": mode, "config": cfg.to_dict(), "max_depth": part.max_depth}
    save_checkpoint(path, Checkpoint(params, dict(part.labels), dict(part.depth), meta))


def load_model(path) -> Tuple[SLGNet, ParamPartition, RunConfig, str]:
    ckpt = load_checkpoint(path)
    try:
        mode = ckpt.meta["mode"]
        cfg = RunConfig.from_dict(ckpt.meta["config"])
    except KeyError as exc:
        raise CheckpointError(f"{path}: metadata lacks {exc}") from exc
    model = SLGNet.for_mode(cfg.model, mode, seed=cfg.optim.seed)
    load_into(model, ckpt)
    part = partition(model, mode)
    if part.labels != ckpt.labels:
        raise CheckpointError(f"{path}: stored partition disagrees with mode {mode!r}")
    apply_partition(model, part)
    return model, part, cfg, mode
