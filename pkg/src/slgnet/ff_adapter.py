"""Feature-fusion adapter: deformable sparse attention from tokens into the pyramid."""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .backbone import TokenGrid
from .nn import Module, child_seeds, dense_init

NUM_LEVELS = 3
OFFSET_UNITS = ("pixel", "normalized")


def phi_map(points: np.ndarray, extent: Tuple[int, int]) -> np.ndarray:
    """Normalized (x, y) -> pixel coordinates of a level with extent (h, w)."""
    h, w = extent
    points = np.asarray(points, dtype=np.float64)
    return points * np.array([w, h], dtype=np.float64) - 0.5


def channels_last(levels: Sequence[Tensor]) -> List[Tensor]:
    """[N, D, h, w] -> [N, h, w, D] for each level."""
    return [level.transpose(0, 2, 3, 1) for level in levels]


class SparseAttention(Module):
    """Per-stage parameters of the hierarchical sparse attention.

    At construction every head that could perturb the frozen stream is zeroed:
    offsets start at the reference points, level/point weights are uniform and
    the output gate is 0, so the injection is an exact identity at step 0.
    """

    def __init__(
        self,
        width: int,
        points: int = 4,
        extents: Sequence[Tuple[int, int]] = ((8, 8), (4, 4), (2, 2)),
        offset_units: str = "pixel",
        seed: int = 0,
    ):
        super().__init__()
        if offset_units not in OFFSET_UNITS:
            raise ValueError(f"offset_units must be one of {OFFSET_UNITS}")
        rng = np.random.default_rng(seed)
        self.width = width
        self.points = points
        self.extents = [tuple(e) for e in extents]
        self.offset_units = offset_units
        lk = NUM_LEVELS * points
        self.add_param("offset.weight", np.zeros((width, lk * 2)))
        self.add_param("offset.bias", np.zeros(lk * 2))
        self.add_param("weight.weight", np.zeros((width, lk)))
        self.add_param("weight.bias", np.zeros(lk))
        self.add_param("value.weight", dense_init(rng, width, width))
        self.add_param("value.bias", np.zeros(width))
        self.add_param("gate", np.zeros(1))
        if offset_units == "normalized":
            self.add_param("offset_scale", np.array([2.0 / max(h, w) for h, w in self.extents]))

    def _p(self, name):
        return self._params[name]

    def sampling(self, tokens: Tensor):
        """Offsets [N,T,3,K,2] and joint-softmax weights [N,T,3,K] for each query."""
        n, t, _ = tokens.shape
        k = self.points
        offsets = ad.linear(tokens, self._p("offset.weight"), self._p("offset.bias")).reshape(n, t, NUM_LEVELS, k, 2)
        logits = ad.linear(tokens, self._p("weight.weight"), self._p("weight.bias"))
        weights = ad.softmax(logits, axis=-1).reshape(n, t, NUM_LEVELS, k)
        return offsets, weights

    def locations(self, grid: TokenGrid, offsets: Tensor, level: int) -> Tensor:
        """Pixel sampling locations [N,T,K,2] on one level."""
        extent = self.extents[level]
        ref = grid.reference_points()
        off = offsets[:, :, level]
        if self.offset_units == "pixel":
            return off + phi_map(ref, extent)[None, :, None, :]
        h, w = extent
        scale = self._p("offset_scale")[level]
        return (off * scale + ref[None, :, None, :]) * np.array([w, h], dtype=np.float64) - 0.5

    def attend(self, grid: TokenGrid, levels: Sequence[Tensor]) -> Tensor:
        """sum_l sum_k A_lqk W_v F_l(phi_l(p_q) + dp_lk), scaled by the output gate.

        ``levels`` are channel-last [N, h, w, D]. W_v is linear and the weights
        sum to one, so it is applied once after aggregation.
        """
        tokens = grid.tokens
        n, t, d = tokens.shape
        if len(levels) != NUM_LEVELS:
            raise DimensionError(f"expected {NUM_LEVELS} pyramid levels, got {len(levels)}")
        for level, extent in zip(levels, self.extents):
            if level.shape[0] != n or tuple(level.shape[1:3]) != extent or level.shape[3] != d:
                raise DimensionError(f"level {level.shape} does not match extent {extent} and width {d}")
        offsets, weights = self.sampling(tokens)
        k = self.points
        acc = None
        for l, fmap in enumerate(levels):
            loc = self.locations(grid, offsets, l).reshape(n, t * k, 2)
            samples = ad.bilinear_gather(fmap, loc).reshape(n, t, k, d)
            term = (samples * weights[:, :, l].reshape(n, t, k, 1)).sum(axis=2)
            acc = term if acc is None else acc + term
        out = ad.linear(acc, self._p("value.weight"), self._p("value.bias"))
        return out * self._p("gate")


class StageEvolver(Module):
    """Token-wise residual MLP applied to every level; last layer starts at zero."""

    def __init__(self, width: int, hidden: int, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.add_param("fc1.weight", dense_init(rng, width, hidden))
        self.add_param("fc1.bias", np.zeros(hidden))
        self.add_param("fc2.weight", np.zeros((hidden, width)))
        self.add_param("fc2.bias", np.zeros(width))

    def __call__(self, levels: Sequence[Tensor]) -> List[Tensor]:
        p = self._params
        out = []
        for x in levels:
            hidden = ad.gelu(ad.linear(x, p["fc1.weight"], p["fc1.bias"]))
            out.append(x + ad.linear(hidden, p["fc2.weight"], p["fc2.bias"]))
        return out


class FFAdapter(Module):
    """One sparse-attention block per backbone stage, one evolver per stage after the first."""

    def __init__(
        self,
        width: int,
        depth: int,
        extents: Sequence[Tuple[int, int]],
        points: int = 4,
        evolver_hidden: int = 16,
        offset_units: str = "pixel",
        seed: int = 0,
    ):
        super().__init__()
        self.depth = depth
        seeds = child_seeds(seed, 2 * depth)
        self.attn = [
            self.add_child(f"attn.{i}", SparseAttention(width, points, extents, offset_units, seeds[i]))
            for i in range(depth)
        ]
        self.evolvers = {
            i: self.add_child(f"evolve.{i}", StageEvolver(width, evolver_hidden, seeds[depth + i]))
            for i in range(1, depth)
        }

    def sparse_attend(self, i: int, grid: TokenGrid, levels: Sequence[Tensor]) -> Tensor:
        return self.attn[i].attend(grid, levels)

    def inject(self, i: int, grid: TokenGrid, levels: Sequence[Tensor]) -> TokenGrid:
        """Residual refinement of the tokens entering block ``i``."""
        return grid.with_tokens(grid.tokens + self.sparse_attend(i, grid, levels))

    def evolve(self, i: int, levels: Sequence[Tensor]) -> List[Tensor]:
        if i not in self.evolvers:
            raise IndexError(f"no evolver for stage {i}; valid stages are 1..{self.depth - 1}")
        return self.evolvers[i](levels)
