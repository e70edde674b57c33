"""Per-module finite-difference checks of every hand-written backward pass."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..autodiff.gradcheck import CheckResult, check_gradients
from ..backbone import Backbone, BackboneConfig, TokenGrid
from ..ff_adapter import FFAdapter, channels_last
from ..lgm import LanguageGuidedModulation, modulate_tokens
from ..nn import Module
from ..structure import StructureEncoder
from .model import ModelConfig, SLGNet

TOLERANCE = 1e-4
MAX_ENTRIES = 200
EPS = 1e-5

# Small shapes: every code path is exercised, each loss evaluation stays cheap.
_BCFG = BackboneConfig(image_size=32, patch_size=8, depth=2, width=8, heads=2, mlp_ratio=2, in_channels=4)
_MCFG = ModelConfig(backbone=_BCFG, stem_channels=4, level_channels=4, points=2, evolver_hidden=4, text_dim=4, text_len=6)


def _perturb(module: Module, rng: np.random.Generator, scale: float = 0.3) -> Dict[str, Tensor]:
    """Make every parameter trainable and nudge it off zero so no gradient is trivially 0."""
    params = module.param_dict()
    for p in params.values():
        p.requires_grad = True
        p.data += rng.normal(0.0, scale, size=p.shape)
    return params


def _projection(rng, shape):
    """Random readout so the scalar loss depends on every output entry differently."""
    return rng.normal(size=shape)


def _case_tensor_autodiff(rng):
    params = {
        "a": Tensor(rng.normal(size=(3, 4)), requires_grad=True),
        "b": Tensor(rng.uniform(0.5, 2.0, size=(4,)), requires_grad=True),
        "c": Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True),
    }
    a, b, c = params["a"], params["b"], params["c"]

    def loss():
        x = ad.tanh(c * a + b) @ a.transpose(1, 0)  # [2,3,3]
        y = ad.softmax(x, axis=-1) * (ad.log(b).sum() + ad.sigmoid(c).mean())
        z = ad.concat([y, (ad.exp(a) / (b + 1.0)).reshape(1, 3, 4)[:, :, :3]], axis=0)
        w = ad.stack([z[0] * ad.amax(z), z[1] * ad.amin(z), ad.variance(z, axis=1)], axis=0)
        return (w * w).sum() + ad.sqrt(ad.gelu(c) ** 2 + 1.0).sum() + ad.relu(ad.maximum(a, -a)).mean()

    return loss, params


def _case_frozen_backbone(rng):
    bb = Backbone(_BCFG, seed=int(rng.integers(1 << 31)))
    params = _perturb(bb, rng, scale=0.05)
    image = rng.normal(size=(2, 4, 32, 32))
    proj = _projection(rng, (2, _BCFG.num_tokens, _BCFG.width))
    return (lambda: (bb.forward(image).tokens * proj).sum()), params


def _case_structure_encoder(rng):
    enc = StructureEncoder(_BCFG.width, 4, 4, seed=int(rng.integers(1 << 31)))
    params = _perturb(enc, rng, scale=0.05)
    vis = rng.uniform(size=(2, 3, 32, 32))
    ir = rng.uniform(size=(2, 1, 32, 32))
    projs = [_projection(rng, (2, _BCFG.width) + e) for e in ((4, 4), (2, 2), (1, 1))]

    def loss():
        pyr = enc.forward(vis, ir)
        return sum(((lvl * p).sum() for lvl, p in zip(pyr.levels, projs)), Tensor(np.zeros(())))

    return loss, params


def _case_ff_adapter(rng):
    ff = FFAdapter(_BCFG.width, _BCFG.depth, _MCFG.level_extents(), points=2, evolver_hidden=4, seed=int(rng.integers(1 << 31)))
    params = _perturb(ff, rng)
    tokens = Tensor(rng.normal(size=(2, _BCFG.num_tokens, _BCFG.width)))
    grid = TokenGrid(tokens, _BCFG.grid, _BCFG.grid)
    levels = [Tensor(rng.normal(size=(2, _BCFG.width) + e)) for e in _MCFG.level_extents()]
    proj = _projection(rng, tokens.shape)

    def loss():
        lv = channels_last(levels)
        g = ff.inject(0, grid, lv)
        lv = ff.evolve(1, lv)
        g = ff.inject(1, g, lv)
        return (g.tokens * proj).sum()

    return loss, params


def _case_lgm(rng):
    lgm = LanguageGuidedModulation(4, _BCFG.width, seed=int(rng.integers(1 << 31)))
    params = _perturb(lgm, rng)
    text = rng.normal(size=(2, 6, 16))
    feats = rng.normal(size=(2, 5, _BCFG.width))
    proj = _projection(rng, feats.shape)

    def loss():
        gamma, beta = lgm(Tensor(text))
        return (modulate_tokens(Tensor(feats), gamma, beta) * proj).sum()

    return loss, params


def _case_harness(rng):
    model = SLGNet(_MCFG, use_sa=True, use_lgm=True, seed=int(rng.integers(1 << 31)))
    params = _perturb(model, rng, scale=0.05)
    vis = rng.uniform(size=(2, 3, 32, 32))
    ir = rng.uniform(size=(2, 1, 32, 32))
    text = rng.normal(size=(2, 6, 16))
    targets = (rng.uniform(size=(2, _BCFG.num_tokens)) < 0.2).astype(np.float64)
    return (lambda: ad.bce_with_logits(model.forward(vis, ir, text), targets)), params


CASES: Dict[str, Callable] = {
    "tensor_autodiff": _case_tensor_autodiff,
    "frozen_backbone": _case_frozen_backbone,
    "structure_encoder": _case_structure_encoder,
    "ff_adapter": _case_ff_adapter,
    "lgm": _case_lgm,
    "harness": _case_harness,
}


@dataclass
class GradReport:
    seed: int
    results: List[CheckResult] = field(default_factory=list)
    seconds: float = 0.0
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return all(r.max_rel_error < self.tolerance for r in self.results)

    def failures(self) -> List[CheckResult]:
        return [r for r in self.results if r.max_rel_error >= self.tolerance]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "seconds": self.seconds,
            "modules": {
                r.name: {
                    "max_rel_error": r.max_rel_error,
                    "n_checked": r.n_checked,
                    "worst": [{"entry": e, "rel_error": err, "analytic": a, "numeric": n} for e, err, a, n in r.worst],
                }
                for r in self.results
            },
        }


def gradcheck(module: str = "all", seed: int = 0, max_entries: int = MAX_ENTRIES, eps: float = EPS) -> GradReport:
    """Central differences on up to ``max_entries`` sampled parameter entries per module."""
    if module == "all":
        names = list(CASES)
    elif module in CASES:
        names = [module]
    else:
        raise ValueError(f"unknown module {module!r}; expected 'all' or one of {sorted(CASES)}")
    t0 = time.perf_counter()
    report = GradReport(seed)
    for name in names:
        rng = np.random.default_rng([seed, list(CASES).index(name)])
        loss_fn, params = CASES[name](rng)
        report.results.append(check_gradients(loss_fn, params, n_samples=max_entries, eps=eps, rng=rng, name=name))
    report.seconds = time.perf_counter() - t0
    return report
