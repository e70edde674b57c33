"""Synthetic aligned RGB/IR scenes with per-token occupancy targets.

Every scene contains target blobs and decoy blobs placed in distinct tokens.
The condition decides which modality shows which:

=================  ======================  ============================
condition          visible channel          thermal channel
=================  ======================  ============================
day                targets                  targets + sun-heated decoys
night              lamp decoys only         targets
overexposed        glare decoys, washed     targets
thermal_crossover  targets                  warm decoys, no target contrast
=================  ======================  ============================

A token that lights up in thermal but not in visible is a decoy by day and a
target at night, so pixels alone leave it ambiguous while the caption's
environment slot resolves it.

Every condition also carries soft glows in both modalities: Gaussian haze
with the same total intensity as a target disc but no sharp rim. A token's
summed brightness therefore cannot tell a glow from a target; its edges can.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Mapping, Optional

import numpy as np

from ..lgm import SLOTS, StructuredCaption

CONDITIONS = ("day", "night", "overexposed", "thermal_crossover")
DEFAULT_MIX = {"day": 0.5, "night": 0.5}
CAPTION_POLICIES = ("structured", "free_form_noisy", "category_list")

# (visible shows targets, thermal shows targets, decoy modality)
_LAYOUT = {
    "day": (True, True, "thermal"),
    "night": (False, True, "visible"),
    "overexposed": (False, True, "visible"),
    "thermal_crossover": (True, False, "thermal"),
}

_ENV = {
    "day": "clear bright daylight",
    "night": "dark night dimly lit",
    "overexposed": "harsh glare overexposed",
    "thermal_crossover": "overcast mild daylight",
}
_THERM = {
    "day": "sun heated surfaces warm clutter",
    "night": "warm targets on cool background",
    "overexposed": "warm targets on cool background",
    "thermal_crossover": "low thermal contrast crossover",
}
_SCENES = ("urban street", "parking lot", "campus walkway", "highway overpass")
_DENSITY = {1: "sparse single pedestrian", 2: "a few pedestrians", 3: "crowded many pedestrians"}
CATEGORY_LIST = "person car bicycle dog"

NOISE_STD = 0.03
GLOW_SIGMA = (1.8, 2.4)  # pixels, for an 8-pixel token


@dataclass(frozen=True)
class SceneCondition:
    condition: str

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")

    @property
    def visible_has_targets(self) -> bool:
        return _LAYOUT[self.condition][0]

    @property
    def thermal_has_targets(self) -> bool:
        return _LAYOUT[self.condition][1]

    @property
    def decoy_modality(self) -> str:
        return _LAYOUT[self.condition][2]


@dataclass
class Blob:
    row: float
    col: float
    radius: float
    token: int


@dataclass
class SyntheticSample:
    visible: np.ndarray  # [3, H, W]
    thermal: np.ndarray  # [1, H, W]
    heatmap: np.ndarray  # [g, g] occupancy of target centers
    caption: StructuredCaption
    condition: str
    seed: int
    index: int
    targets: List[Blob] = field(default_factory=list)
    decoys: List[Blob] = field(default_factory=list)
    glows: List[Blob] = field(default_factory=list)  # radius holds the Gaussian sigma

    @property
    def sample_id(self) -> str:
        return f"{self.seed}-{self.index}"

    def truthful_caption(self) -> StructuredCaption:
        return self.caption


def _disc(size: int, blob: Blob) -> np.ndarray:
    rr, cc = np.mgrid[0:size, 0:size]
    dist = np.hypot(rr + 0.5 - blob.row, cc + 0.5 - blob.col)
    return np.clip(blob.radius + 0.5 - dist, 0.0, 1.0)


def _glow(size: int, blob: Blob, mass: float) -> np.ndarray:
    """Isotropic Gaussian whose integral over the plane is ``mass``."""
    rr, cc = np.mgrid[0:size, 0:size]
    d2 = (rr + 0.5 - blob.row) ** 2 + (cc + 0.5 - blob.col) ** 2
    return mass / (2 * np.pi * blob.radius**2) * np.exp(-0.5 * d2 / blob.radius**2)


def _texture(rng: np.random.Generator, size: int, amplitude: float) -> np.ndarray:
    rr, cc = np.mgrid[0:size, 0:size] / size
    out = np.zeros((size, size))
    for _ in range(3):
        fr, fc = rng.uniform(0.5, 2.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        out += np.sin(2 * np.pi * (fr * rr + fc * cc) + phase)
    return amplitude * out / 3.0


def structured_caption(condition: str, n_targets: int, rng: np.random.Generator) -> StructuredCaption:
    return StructuredCaption(
        env=_ENV[condition],
        type=_SCENES[rng.integers(len(_SCENES))],
        obj=_DENSITY[min(max(n_targets, 1), 3)],
        therm=_THERM[condition],
    )


def apply_policy(caption: StructuredCaption, policy: str, rng: np.random.Generator) -> StructuredCaption:
    """Re-express a truthful caption under one of the prompt-granularity policies."""
    if policy == "structured":
        return caption
    if policy == "free_form_noisy":
        texts = list(caption.slots())
        order = rng.permutation(len(texts))
        return StructuredCaption(**{slot: texts[j] for slot, j in zip(SLOTS, order)})
    if policy == "category_list":
        return StructuredCaption(env="", type="", obj=CATEGORY_LIST, therm="")
    raise ValueError(f"unknown caption policy {policy!r}")


def _sample_condition(rng: np.random.Generator, mix: Mapping[str, float]) -> str:
    names = list(mix)
    probs = np.array([mix[k] for k in names], dtype=np.float64)
    if (probs < 0).any() or probs.sum() <= 0:
        raise ValueError(f"invalid condition mix {dict(mix)}")
    for name in names:
        SceneCondition(name)
    return names[rng.choice(len(names), p=probs / probs.sum())]


def make_sample(
    seed: int,
    index: int,
    image_size: int = 64,
    grid: int = 8,
    condition_mix: Mapping[str, float] = DEFAULT_MIX,
    caption_policy: str = "structured",
    condition: Optional[str] = None,
) -> SyntheticSample:
    """One scene, a pure function of (seed, index) and the generator settings."""
    if image_size < 16 or image_size % grid:
        raise ValueError(f"image_size {image_size} must be >= 16 and divisible by grid {grid}")
    rng = np.random.default_rng([seed, index])
    cond = condition or _sample_condition(rng, condition_mix)
    layout = SceneCondition(cond)
    cell = image_size // grid

    n_targets = int(rng.integers(1, 4))
    n_decoys = int(rng.integers(1, 4))
    n_glows = int(rng.integers(1, 4))
    tokens = rng.choice(grid * grid, size=n_targets + n_decoys + n_glows, replace=False)
    radius_max = min(3.0, cell / 2 - 1.0)

    def place(token: int) -> Blob:
        r = rng.uniform(0.75 * radius_max, radius_max)
        tr, tc = divmod(int(token), grid)
        lo, hi = r + 0.5, cell - r - 0.5
        return Blob(tr * cell + rng.uniform(lo, hi), tc * cell + rng.uniform(lo, hi), r, int(token))

    targets = [place(t) for t in tokens[:n_targets]]
    decoys = [place(t) for t in tokens[n_targets : n_targets + n_decoys]]
    glows = []
    for t in tokens[n_targets + n_decoys :]:
        tr, tc = divmod(int(t), grid)
        jitter = rng.uniform(-1.0, 1.0, size=2)
        sigma = rng.uniform(GLOW_SIGMA[0], GLOW_SIGMA[1]) * cell / 8
        glows.append(Blob(tr * cell + cell / 2 + jitter[0], tc * cell + cell / 2 + jitter[1], sigma, int(t)))

    base_v = rng.uniform(0.2, 0.45, size=3)
    visible = base_v[:, None, None] + _texture(rng, image_size, 0.05)[None]
    thermal = rng.uniform(0.2, 0.4) + _texture(rng, image_size, 0.04)[None]
    tint = rng.uniform(0.7, 1.0, size=3)

    def paint_visible(blob: Blob):
        visible[:] += rng.uniform(0.3, 0.5) * tint[:, None, None] * _disc(image_size, blob)[None]

    def paint_thermal(blob: Blob):
        thermal[:] += rng.uniform(0.3, 0.5) * _disc(image_size, blob)[None]

    if layout.visible_has_targets:
        for b in targets:
            paint_visible(b)
    if layout.thermal_has_targets:
        for b in targets:
            paint_thermal(b)
    for b in decoys:
        (paint_visible if layout.decoy_modality == "visible" else paint_thermal)(b)
    for b in glows:
        # same total intensity as a typical target disc of the scene's size
        mass = np.pi * radius_max**2 * 0.9
        visible[:] += rng.uniform(0.3, 0.5) * tint[:, None, None] * _glow(image_size, b, mass)[None]
        thermal[:] += rng.uniform(0.3, 0.5) * _glow(image_size, b, mass)[None]
    if cond == "overexposed":
        visible += 0.35

    visible += rng.normal(0.0, NOISE_STD, size=visible.shape)
    thermal += rng.normal(0.0, NOISE_STD, size=thermal.shape)
    visible = np.clip(visible, 0.0, 1.0)
    thermal = np.clip(thermal, 0.0, 1.0)

    heatmap = np.zeros((grid, grid))
    for b in targets:
        heatmap[int(b.row // cell), int(b.col // cell)] = 1.0

    caption = apply_policy(structured_caption(cond, n_targets, rng), caption_policy, rng)
    return SyntheticSample(visible, thermal, heatmap, caption, cond, seed, index, targets, decoys, glows)


def synthesize(
    n: int,
    condition_mix: Mapping[str, float] = DEFAULT_MIX,
    seed: int = 0,
    image_size: int = 64,
    grid: int = 8,
    caption_policy: str = "structured",
    start: int = 0,
) -> List[SyntheticSample]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return [
        make_sample(seed, start + i, image_size, grid, condition_mix, caption_policy)
        for i in range(n)
    ]


def target_mask(sample: SyntheticSample) -> np.ndarray:
    size = sample.visible.shape[-1]
    mask = np.zeros((size, size))
    for b in sample.targets:
        mask = np.maximum(mask, _disc(size, b))
    return mask
