"""The assembled detector and its training modes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..backbone import BackboneConfig, init_frozen
from ..ff_adapter import FFAdapter, channels_last
from ..lgm import LanguageGuidedModulation, embed_caption, modulate_tokens
from ..nn import Module, child_seeds, dense_init
from ..structure import StructureEncoder

MODES = ("adapter", "full", "baseline", "+sa", "+sa+lgm")


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    stem_channels: int = 8
    level_channels: int = 8
    points: int = 4
    evolver_hidden: int = 16
    text_dim: int = 16
    text_len: int = 77
    offset_units: str = "pixel"
    backbone_seed: int = 0
    head_prior: float = 1 / 32  # expected share of positive tokens; sets the initial head bias

    def level_extents(self):
        s = self.backbone.image_size
        return [(s // 8, s // 8), (s // 16, s // 16), (s // 32, s // 32)]


def mode_components(mode: str) -> Dict[str, bool]:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    return {
        "sa": mode != "baseline",
        "lgm": mode in ("adapter", "full", "+sa+lgm"),
    }


@dataclass
class Batch:
    visible: np.ndarray  # [N,3,H,W]
    thermal: np.ndarray  # [N,1,H,W]
    targets: np.ndarray  # [N,T]
    text: Optional[np.ndarray]  # [N,L,4d]
    conditions: List[str]


class SLGNet(Module):
    """Frozen backbone with optional structure adapter, LGM and a per-token head."""

    def __init__(self, cfg: ModelConfig, use_sa: bool = True, use_lgm: bool = True, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.use_sa = use_sa
        self.use_lgm = use_lgm
        seeds = child_seeds(seed, 4)
        bcfg = cfg.backbone
        self.backbone = self.add_child("backbone", init_frozen(bcfg, cfg.backbone_seed))
        if use_sa:
            self.structure = self.add_child(
                "structure", StructureEncoder(bcfg.width, cfg.stem_channels, cfg.level_channels, seeds[0])
            )
            self.ff = self.add_child(
                "ff",
                FFAdapter(bcfg.width, bcfg.depth, cfg.level_extents(), cfg.points, cfg.evolver_hidden, cfg.offset_units, seeds[1]),
            )
        if use_lgm:
            self.lgm = self.add_child("lgm", LanguageGuidedModulation(cfg.text_dim, bcfg.width, seeds[2]))
        rng = np.random.default_rng(seeds[3])
        self.add_param("head.weight", dense_init(rng, bcfg.width, 1) * 0.1)
        prior = cfg.head_prior
        if not 0.0 < prior < 1.0:
            raise ValueError(f"head_prior must be in (0, 1), got {prior}")
        self.add_param("head.bias", np.full(1, np.log(prior / (1.0 - prior))))

    @classmethod
    def for_mode(cls, cfg: ModelConfig, mode: str, seed: int = 0) -> "SLGNet":
        comps = mode_components(mode)
        return cls(cfg, use_sa=comps["sa"], use_lgm=comps["lgm"], seed=seed)

    def features(self, visible, thermal, text=None) -> Tensor:
        """Final [N, T, D] features right before the task head."""
        vis = visible if isinstance(visible, Tensor) else Tensor(visible)
        ir = thermal if isinstance(thermal, Tensor) else Tensor(thermal)
        grid = self.backbone.patch_embed(ad.concat([vis, ir], axis=1))
        levels = None
        if self.use_sa:
            pyramid = self.structure.forward(vis, ir)
            levels = channels_last(pyramid.levels)
        for i in range(self.backbone.cfg.depth):
            if levels is not None:
                if i > 0:
                    levels = self.ff.evolve(i, levels)
                grid = self.ff.inject(i, grid, levels)
            grid = self.backbone.run_block(i, grid)
        tokens = self.backbone.final_norm(grid).tokens
        if self.use_lgm:
            if text is None:
                raise ValueError("LGM enabled but no caption embeddings given")
            gamma, beta = self.lgm(text if isinstance(text, Tensor) else Tensor(text))
            tokens = modulate_tokens(tokens, gamma, beta)
        return tokens

    def head(self, tokens: Tensor) -> Tensor:
        n, t, _ = tokens.shape
        return ad.linear(tokens, self._params["head.weight"], self._params["head.bias"]).reshape(n, t)

    def forward(self, visible, thermal, text=None) -> Tensor:
        """Per-token occupancy logits [N, T]."""
        return self.head(self.features(visible, thermal, text))

    def loss(self, batch: Batch) -> Tensor:
        logits = self.forward(batch.visible, batch.thermal, batch.text)
        return ad.bce_with_logits(logits, batch.targets)


def encode_captions(samples, embedder) -> np.ndarray:
    """[N, L, 4d] concatenated slot embeddings for a list of samples."""
    rows = []
    for s in samples:
        mats = embed_caption(s.caption, embedder, sample_id=s.sample_id)
        rows.append(np.concatenate(mats, axis=-1))
    return np.stack(rows)


def make_batch(samples, text: Optional[np.ndarray] = None) -> Batch:
    return Batch(
        visible=np.stack([s.visible for s in samples]),
        thermal=np.stack([s.thermal for s in samples]),
        targets=np.stack([s.heatmap.reshape(-1) for s in samples]),
        text=text,
        conditions=[s.condition for s in samples],
    )
