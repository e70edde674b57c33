"""Frozen/adapter labeling of every parameter, and the stage depth used for LR decay."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict

from .model import MODES, SLGNet

FROZEN = "frozen"
ADAPTER = "adapter"

_BLOCK = re.compile(r"^backbone\.blocks\.(\d+)\.")
_STAGE = re.compile(r"^ff\.(?:attn|evolve)\.(\d+)\.")


class PartitionError(ValueError):
    """A parameter matched no labeling rule."""


@dataclass
class ParamPartition:
    labels: Dict[str, str]
    depth: Dict[str, int]
    max_depth: int
    sizes: Dict[str, int] = field(default_factory=dict)

    def names(self, label: str):
        return [k for k, v in self.labels.items() if v == label]

    @property
    def params_total(self) -> int:
        return sum(self.sizes.values())

    @property
    def params_trainable(self) -> int:
        return sum(self.sizes[k] for k, v in self.labels.items() if v == ADAPTER)

    @property
    def adapter_fraction(self) -> float:
        return self.params_trainable / self.params_total

    def lr(self, name: str, base_lr: float, layer_decay: float) -> float:
        return base_lr * layer_decay ** (self.max_depth - self.depth[name])


def stage_depth(name: str, max_depth: int) -> int:
    """Stem/pyramid/patch embedding sit at 0, stage-i modules at i, heads at max_depth."""
    m = _BLOCK.match(name) or _STAGE.match(name)
    if m:
        return int(m.group(1))
    if name.startswith(("structure.", "backbone.patch_embed.", "backbone.pos_embed")):
        return 0
    if name.startswith(("lgm.", "head.", "backbone.norm.")):
        return max_depth
    raise PartitionError(f"no depth rule for parameter {name!r}")


def _trainable(name: str, mode: str) -> bool:
    if mode == "full":
        return True
    if name.startswith("head."):
        return True
    if name.startswith("backbone."):
        return mode in ("baseline", "+sa", "+sa+lgm") and name.startswith("backbone.patch_embed.")
    if name.startswith(("structure.", "ff.", "lgm.")):
        return True
    raise PartitionError(f"no label rule for parameter {name!r}")


def partition(model: SLGNet, mode: str = "adapter") -> ParamPartition:
    """Label every parameter; raises PartitionError if any is left unlabeled.

    ``adapter`` keeps the whole backbone frozen. The ablation rows
    (baseline, +sa, +sa+lgm) also train the patch embedding, and ``full``
    trains everything.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    max_depth = model.backbone.cfg.depth
    labels, depth, sizes = {}, {}, {}
    for name, p in model.named_parameters():
        labels[name] = ADAPTER if _trainable(name, mode) else FROZEN
        depth[name] = stage_depth(name, max_depth)
        sizes[name] = p.size
    return ParamPartition(labels, depth, max_depth, sizes)


def apply_partition(model: SLGNet, part: ParamPartition) -> None:
    for name, p in model.named_parameters():
        p.requires_grad = part.labels[name] == ADAPTER
