"""AdamW with per-parameter layer-wise learning-rate decay."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict

import numpy as np

from ..autodiff import Tensor
from .partition import ADAPTER, ParamPartition


@dataclass(frozen=True)
class OptimizerConfig:
    base_lr: float = 1e-4
    weight_decay: float = 0.1
    layer_decay: float = 0.7
    epochs: int = 20
    batch_size: int = 8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def to_dict(self) -> dict:
        return asdict(self)


class AdamW:
    """Adam moments plus decoupled weight decay on matrices/kernels only.

    Only parameters labeled ``adapter`` are ever touched; frozen tensors are
    not even read during ``step``.
    """

    def __init__(self, params: Dict[str, Tensor], part: ParamPartition, cfg: OptimizerConfig):
        self.cfg = cfg
        self.params = {k: p for k, p in params.items() if part.labels[k] == ADAPTER}
        self.lr = {k: part.lr(k, cfg.base_lr, cfg.layer_decay) for k in self.params}
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        cfg = self.cfg
        self.t += 1
        c1 = 1.0 - cfg.beta1**self.t
        c2 = 1.0 - cfg.beta2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            lr = self.lr[k]
            if p.data.ndim >= 2 and cfg.weight_decay:
                p.data *= 1.0 - lr * cfg.weight_decay
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
