"""Structure encoder: shared stem, 3/5/7 pyramid and SSIM-gated modality fusion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .nn import Module, conv_init

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()
SOBEL_EPS = 1e-6
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 7
RANGE_EPS = 1e-8

PYRAMID_KERNELS = (3, 5, 7)


@dataclass
class AlignmentWeights:
    grad_v: Tensor
    grad_t: Tensor
    grad_ref: Tensor
    m_v: Tensor  # raw SSIM scores in [-1, 1]
    m_t: Tensor

    @property
    def gate_v(self) -> Tensor:
        return ad.sigmoid(self.m_v)

    @property
    def gate_t(self) -> Tensor:
        return ad.sigmoid(self.m_t)


@dataclass
class StructuralPyramid:
    """Three fused levels [N, D, h, w] at 1/8, 1/16 and 1/32 of the input."""

    levels: List[Tensor]
    alignment: List[AlignmentWeights] = field(default_factory=list)

    def __post_init__(self):
        if len(self.levels) != 3:
            raise DimensionError(f"pyramid needs exactly 3 levels, got {len(self.levels)}")

    @property
    def extents(self) -> List[Tuple[int, int]]:
        return [tuple(level.shape[-2:]) for level in self.levels]


def sobel_magnitude(features, eps: float = SOBEL_EPS) -> Tensor:
    """Per-channel Sobel magnitude sqrt(gx^2 + gy^2 + eps), averaged over channels.

    Borders are replicated so constant maps give exactly sqrt(eps).
    """
    features = features if isinstance(features, Tensor) else Tensor(features)
    n, c, h, w = features.shape
    x = features.reshape(n * c, 1, h, w)
    kernel = np.stack([SOBEL_X, SOBEL_Y])[:, None]  # [2, 1, 3, 3]
    g = ad.conv2d(ad.pad2d(x, 1, "replicate"), Tensor(kernel))
    mag = ad.sqrt((g * g).sum(axis=1) + eps)  # [N*C, h, w]
    return mag.reshape(n, c, h, w).mean(axis=1, keepdims=True)


def reference_map(grad_v, grad_t) -> Tensor:
    """Element-wise max of the two edge maps; ties go to the visible branch."""
    grad_v = grad_v if isinstance(grad_v, Tensor) else Tensor(grad_v)
    grad_t = grad_t if isinstance(grad_t, Tensor) else Tensor(grad_t)
    if grad_v.shape != grad_t.shape:
        raise DimensionError(f"reference_map: {grad_v.shape} vs {grad_t.shape}")
    return ad.maximum(grad_v, grad_t)


def box_filter(x: Tensor, window: int = SSIM_WINDOW) -> Tensor:
    """Uniform window mean over the last two axes, border replicated. x: [N,C,h,w]."""
    n, c, h, w = x.shape
    flat = x.reshape(n * c, 1, h, w)
    kernel = Tensor(np.full((1, 1, window, window), 1.0 / window**2))
    out = ad.conv2d(ad.pad2d(flat, window // 2, "replicate"), kernel)
    return out.reshape(n, c, h, w)


def dynamic_range(ref: Tensor) -> Tensor:
    return ad.maximum(ad.amax(ref) - ad.amin(ref), RANGE_EPS)


def ssim_alignment(
    grad_m,
    grad_ref,
    k1: float = SSIM_K1,
    k2: float = SSIM_K2,
    window: int = SSIM_WINDOW,
    value_range: Optional[Tensor] = None,
) -> Tensor:
    """Local SSIM between a modality's edge map and the reference, per location."""
    return ssim_pair(grad_m, grad_m, grad_ref, k1, k2, window, value_range)[0]


def ssim_pair(grad_v, grad_t, grad_ref, k1=SSIM_K1, k2=SSIM_K2, window=SSIM_WINDOW, value_range=None):
    """SSIM of both modalities against one reference, sharing the window pass."""
    grad_v, grad_t, grad_ref = (t if isinstance(t, Tensor) else Tensor(t) for t in (grad_v, grad_t, grad_ref))
    if not grad_v.shape == grad_t.shape == grad_ref.shape:
        raise DimensionError("ssim: edge maps and reference must share a shape")
    L = dynamic_range(grad_ref) if value_range is None else value_range
    xi1 = (L * k1) * (L * k1)
    xi2 = (L * k2) * (L * k2)
    v, t, r = grad_v, grad_t, grad_ref
    stats = box_filter(ad.concat([v, t, r, v * v, t * t, r * r, v * r, t * r], axis=1), window)
    mu_v, mu_t, mu_r, ev2, et2, er2, evr, etr = (stats[:, i : i + 1] for i in range(8))
    var_r = er2 - mu_r * mu_r

    def score(mu_m, em2, emr):
        var_m = em2 - mu_m * mu_m
        cov = emr - mu_m * mu_r
        num = (2.0 * mu_m * mu_r + xi1) * (2.0 * cov + xi2)
        den = (mu_m * mu_m + mu_r * mu_r + xi1) * (var_m + var_r + xi2)
        return num / den

    return score(mu_v, ev2, evr), score(mu_t, et2, etr)


def fuse_level(f_v, f_t, m_v, m_t) -> Tensor:
    """sigmoid(m_v) * f_v + sigmoid(m_t) * f_t, gates broadcast over channels."""
    f_v, f_t = (x if isinstance(x, Tensor) else Tensor(x) for x in (f_v, f_t))
    if f_v.shape != f_t.shape:
        raise DimensionError(f"fuse_level: {f_v.shape} vs {f_t.shape}")
    return ad.sigmoid(m_v) * f_v + ad.sigmoid(m_t) * f_t


class StructureEncoder(Module):
    """Shared stem, pyramid, per-level alignment fusion and 1x1 projection to D."""

    def __init__(self, width: int, stem_channels: int = 8, level_channels: int = 8, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.width = width
        self.stem_channels = stem_channels
        self.level_channels = level_channels
        self.add_param("stem.conv1.weight", conv_init(rng, stem_channels, 3, 3))
        self.add_param("stem.conv1.bias", np.zeros(stem_channels))
        self.add_param("stem.conv2.weight", conv_init(rng, stem_channels, stem_channels, 3))
        self.add_param("stem.conv2.bias", np.zeros(stem_channels))
        c_in = stem_channels
        for l, k in enumerate(PYRAMID_KERNELS):
            self.add_param(f"pyramid.{l}.weight", conv_init(rng, level_channels, c_in, k))
            self.add_param(f"pyramid.{l}.bias", np.zeros(level_channels))
            c_in = level_channels
        for l in range(3):
            self.add_param(f"proj.{l}.weight", conv_init(rng, width, level_channels, 1))
            self.add_param(f"proj.{l}.bias", np.zeros(width))

    def _p(self, name):
        return self._params[name]

    def stem(self, i_v, i_t) -> Tuple[Tensor, Tensor]:
        """Shared stem on both modalities; IR is replicated to three channels first."""
        i_v, i_t = (x if isinstance(x, Tensor) else Tensor(x) for x in (i_v, i_t))
        if i_v.ndim != 4 or i_v.shape[1] != 3 or i_t.ndim != 4 or i_t.shape[1] != 1:
            raise DimensionError(f"stem expects [N,3,H,W] and [N,1,H,W], got {i_v.shape}, {i_t.shape}")
        if i_v.shape[0] != i_t.shape[0] or i_v.shape[2:] != i_t.shape[2:]:
            raise DimensionError(f"misaligned pair {i_v.shape} vs {i_t.shape}")
        n = i_v.shape[0]
        x = ad.concat([i_v, ad.concat([i_t, i_t, i_t], axis=1)], axis=0)
        x = ad.gelu(ad.conv2d(x, self._p("stem.conv1.weight"), self._p("stem.conv1.bias"), stride=2, padding=1))
        x = ad.gelu(ad.conv2d(x, self._p("stem.conv2.weight"), self._p("stem.conv2.bias"), stride=2, padding=1))
        return x[:n], x[n:]

    def pyramid(self, features: Tensor) -> List[Tensor]:
        h, w = features.shape[-2:]
        if min(h, w) < 4:
            raise DimensionError(f"stem output {h}x{w} too small for three halvings")
        levels = []
        x = features
        for l, k in enumerate(PYRAMID_KERNELS):
            x = ad.gelu(ad.conv2d(x, self._p(f"pyramid.{l}.weight"), self._p(f"pyramid.{l}.bias"), stride=2, padding=k // 2))
            levels.append(x)
        return levels

    def project(self, level: int, fused: Tensor) -> Tensor:
        return ad.conv2d(fused, self._p(f"proj.{level}.weight"), self._p(f"proj.{level}.bias"))

    def align(self, f_v: Tensor, f_t: Tensor) -> AlignmentWeights:
        grad_v = sobel_magnitude(f_v)
        grad_t = sobel_magnitude(f_t)
        grad_ref = reference_map(grad_v, grad_t)
        m_v, m_t = ssim_pair(grad_v, grad_t, grad_ref)
        return AlignmentWeights(grad_v, grad_t, grad_ref, m_v, m_t)

    def forward(self, i_v, i_t) -> StructuralPyramid:
        f_v, f_t = self.stem(i_v, i_t)
        n = f_v.shape[0]
        both = self.pyramid(ad.concat([f_v, f_t], axis=0))
        levels, alignment = [], []
        for l, level in enumerate(both):
            lv, lt = level[:n], level[n:]
            weights = self.align(lv, lt)
            fused = fuse_level(lv, lt, weights.m_v, weights.m_t)
            levels.append(self.project(l, fused))
            alignment.append(weights)
        return StructuralPyramid(levels, alignment)
