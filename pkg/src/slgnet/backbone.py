"""Toy pre-norm vision transformer used as the frozen feature extractor."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .nn import Module, dense_init


@dataclass(frozen=True)
class BackboneConfig:
    image_size: int = 64
    patch_size: int = 8
    depth: int = 4
    width: int = 64
    heads: int = 4
    mlp_ratio: int = 4
    in_channels: int = 4

    def __post_init__(self):
        if self.image_size <= 0 or self.patch_size <= 0 or self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @classmethod
    def coarse_grid(cls, **overrides) -> "BackboneConfig":
        """Token grid at 1/16 of the input, as in ViT-B/16."""
        overrides.setdefault("patch_size", 16)
        return cls(**overrides)

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.grid * self.grid

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TokenGrid:
    tokens: Tensor  # [N, T, D]
    grid_h: int
    grid_w: int

    def reference_points(self) -> np.ndarray:
        """Normalized (x, y) token centers, row-major over the grid: [T, 2]."""
        rows, cols = np.meshgrid(np.arange(self.grid_h), np.arange(self.grid_w), indexing="ij")
        return np.stack([(cols.ravel() + 0.5) / self.grid_w, (rows.ravel() + 0.5) / self.grid_h], axis=1)

    def with_tokens(self, tokens: Tensor) -> "TokenGrid":
        return TokenGrid(tokens, self.grid_h, self.grid_w)


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.width
        patch_dim = cfg.in_channels * cfg.patch_size**2
        self.add_param("patch_embed.weight", dense_init(rng, patch_dim, d))
        self.add_param("patch_embed.bias", rng.normal(0.0, 0.02, size=d))
        self.add_param("pos_embed", rng.normal(0.0, 0.02, size=(cfg.num_tokens, d)))
        hidden = cfg.mlp_ratio * d
        for i in range(cfg.depth):
            p = f"blocks.{i}."
            self.add_param(p + "norm1.weight", np.ones(d))
            self.add_param(p + "norm1.bias", np.zeros(d))
            self.add_param(p + "attn.qkv.weight", dense_init(rng, d, 3 * d))
            self.add_param(p + "attn.qkv.bias", np.zeros(3 * d))
            self.add_param(p + "attn.proj.weight", dense_init(rng, d, d))
            self.add_param(p + "attn.proj.bias", np.zeros(d))
            self.add_param(p + "norm2.weight", np.ones(d))
            self.add_param(p + "norm2.bias", np.zeros(d))
            self.add_param(p + "mlp.fc1.weight", dense_init(rng, d, hidden))
            self.add_param(p + "mlp.fc1.bias", np.zeros(hidden))
            self.add_param(p + "mlp.fc2.weight", dense_init(rng, hidden, d))
            self.add_param(p + "mlp.fc2.bias", np.zeros(d))
        self.add_param("norm.weight", np.ones(d))
        self.add_param("norm.bias", np.zeros(d))

    def _p(self, name: str) -> Tensor:
        return self._params[name]

    def patch_embed(self, image, with_position: bool = True) -> TokenGrid:
        """Split [N,4,H,W] into non-overlapping patches and project them to width D."""
        image = image if isinstance(image, Tensor) else Tensor(image)
        cfg = self.cfg
        if image.ndim != 4 or image.shape[1] != cfg.in_channels:
            raise DimensionError(f"expected [N,{cfg.in_channels},H,W] input, got {image.shape}")
        n, c, h, w = image.shape
        if h != cfg.image_size or w != cfg.image_size:
            raise DimensionError(f"expected {cfg.image_size}x{cfg.image_size} input, got {h}x{w}")
        p, g = cfg.patch_size, cfg.grid
        patches = image.reshape(n, c, g, p, g, p).transpose(0, 2, 4, 1, 3, 5).reshape(n, g * g, c * p * p)
        tokens = ad.linear(patches, self._p("patch_embed.weight"), self._p("patch_embed.bias"))
        if with_position:
            tokens = tokens + self._p("pos_embed")
        return TokenGrid(tokens, g, g)

    def attention(self, i: int, x: Tensor, return_weights: bool = False):
        cfg = self.cfg
        pre = f"blocks.{i}.attn."
        n, t, d = x.shape
        h, dh = cfg.heads, d // cfg.heads
        qkv = ad.linear(x, self._p(pre + "qkv.weight"), self._p(pre + "qkv.bias"))
        qkv = qkv.reshape(n, t, 3, h, dh).transpose(2, 0, 3, 1, 4)  # [3, N, H, T, dh]
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        weights = ad.softmax(scores, axis=-1)
        mixed = (weights @ v).transpose(0, 2, 1, 3).reshape(n, t, d)
        out = ad.linear(mixed, self._p(pre + "proj.weight"), self._p(pre + "proj.bias"))
        return (out, weights) if return_weights else out

    def run_block(self, i: int, grid: TokenGrid) -> TokenGrid:
        if not 0 <= i < self.cfg.depth:
            raise IndexError(f"block index {i} out of range for depth {self.cfg.depth}")
        pre = f"blocks.{i}."
        x = grid.tokens
        y = ad.layer_norm(x, self._p(pre + "norm1.weight"), self._p(pre + "norm1.bias"))
        x = x + self.attention(i, y)
        y = ad.layer_norm(x, self._p(pre + "norm2.weight"), self._p(pre + "norm2.bias"))
        y = ad.gelu(ad.linear(y, self._p(pre + "mlp.fc1.weight"), self._p(pre + "mlp.fc1.bias")))
        x = x + ad.linear(y, self._p(pre + "mlp.fc2.weight"), self._p(pre + "mlp.fc2.bias"))
        return grid.with_tokens(x)

    def final_norm(self, grid: TokenGrid) -> TokenGrid:
        return grid.with_tokens(ad.layer_norm(grid.tokens, self._p("norm.weight"), self._p("norm.bias")))

    def forward(self, image) -> TokenGrid:
        grid = self.patch_embed(image)
        for i in range(self.cfg.depth):
            grid = self.run_block(i, grid)
        return self.final_norm(grid)


def init_frozen(cfg: BackboneConfig, seed: int = 0) -> Backbone:
    """Deterministically build a backbone with every parameter frozen."""
    return Backbone(cfg, seed).requires_grad_(False)
