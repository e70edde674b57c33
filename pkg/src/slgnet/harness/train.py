"""Training and evaluation loops."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..autodiff import NumericError, no_grad
from ..lgm import ToyEmbedder
from .config import RunConfig
from .data import SyntheticSample, synthesize
from .metrics import average_precision
from .model import SLGNet, encode_captions, make_batch
from .optim import AdamW
from .partition import apply_partition, partition

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    samples: List[SyntheticSample]
    text: Optional[np.ndarray]  # [N, L, 4d] or None when LGM is off

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, idx) -> "Dataset":
        idx = list(idx)
        return Dataset([self.samples[i] for i in idx], None if self.text is None else self.text[idx])


@dataclass
class TrainingReport:
    mode: str
    config: dict
    params_total: int
    params_trainable: int
    history: List[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "config": self.config,
            "params_total": self.params_total,
            "params_trainable": self.params_trainable,
            "history": self.history,
            **self.final,
        }

    def val_loss_at(self, epoch: int) -> float:
        for row in self.history:
            if row["epoch"] == epoch:
                return row["val_loss"]
        raise KeyError(f"no epoch {epoch} in history")


def build_datasets(cfg: RunConfig, seed: int, embedder=None):
    """Train/val splits for ``seed``; val indices follow the train indices."""
    data = cfg.data
    bcfg = cfg.model.backbone
    common = dict(
        condition_mix=data.condition_mix,
        seed=seed,
        image_size=bcfg.image_size,
        grid=bcfg.grid,
        caption_policy=data.caption_policy,
    )
    train = synthesize(data.n_train, **common)
    val = synthesize(data.n_val, start=data.n_train, **common)
    embedder = embedder or default_embedder(cfg)
    return (
        Dataset(train, encode_captions(train, embedder)),
        Dataset(val, encode_captions(val, embedder)),
    )


def default_embedder(cfg: RunConfig) -> ToyEmbedder:
    return ToyEmbedder(dim=cfg.model.text_dim, length=cfg.model.text_len, seed=0)


def predict(model: SLGNet, dataset: Dataset, batch_size: int = 32) -> np.ndarray:
    """Per-token logits [N, T] without recording a tape."""
    out = []
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            part = dataset.subset(range(start, min(start + batch_size, len(dataset))))
            batch = make_batch(part.samples, part.text if model.use_lgm else None)
            out.append(model.forward(batch.visible, batch.thermal, batch.text).data)
    return np.concatenate(out)


def _bce(logits: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.maximum(logits, 0) - logits * y + np.log1p(np.exp(-np.abs(logits)))))


def evaluate(model: SLGNet, dataset: Dataset, batch_size: int = 32) -> dict:
    """token_ap, loss, and the same two numbers per scene condition."""
    if len(dataset) == 0:
        raise ValueError("evaluate on an empty dataset")
    logits = predict(model, dataset, batch_size)
    y = np.stack([s.heatmap.reshape(-1) for s in dataset.samples])
    metrics = {"token_ap": average_precision(logits, y), "loss": _bce(logits, y)}
    conds = np.array([s.condition for s in dataset.samples])
    breakdown = {}
    for c in sorted(set(conds)):
        m = conds == c
        breakdown[str(c)] = {"token_ap": average_precision(logits[m], y[m]), "loss": _bce(logits[m], y[m]), "n": int(m.sum())}
    metrics["condition_breakdown"] = breakdown
    return metrics


def train(
    cfg: RunConfig,
    mode: str,
    datasets=None,
    steps: Optional[int] = None,
    eval_every_epoch: bool = True,
):
    """Optimize the trainable partition of a fresh model; returns (model, partition, report).

    ``steps`` caps the total number of optimizer steps (epochs are then
    ignored once the cap is hit).
    """
    seed = cfg.optim.seed
    train_set, val_set = datasets or build_datasets(cfg, seed)
    model = SLGNet.for_mode(cfg.model, mode, seed=seed)
    part = partition(model, mode)
    apply_partition(model, part)
    opt = AdamW(model.param_dict(), part, cfg.optim)
    report = TrainingReport(mode, cfg.to_dict(), part.params_total, part.params_trainable)
    rng = np.random.default_rng([seed, 7])

    def record(epoch: int, train_loss: float):
        if not eval_every_epoch and epoch not in (0, cfg.optim.epochs):
            return
        m = evaluate(model, val_set)
        report.history.append(
            {"epoch": epoch, "train_loss": train_loss, "val_loss": m["loss"], "token_ap": m["token_ap"]}
        )
        log.info("%s epoch %d train %.4f val %.4f ap %.4f", mode, epoch, train_loss, m["loss"], m["token_ap"])

    record(0, float("nan"))
    done = 0
    bs = cfg.optim.batch_size
    for epoch in range(1, cfg.optim.epochs + 1):
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), bs):
            if steps is not None and done >= steps:
                break
            part_ds = train_set.subset(order[start : start + bs])
            batch = make_batch(part_ds.samples, part_ds.text if model.use_lgm else None)
            opt.zero_grad()
            loss = model.loss(batch)
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            losses.append(loss.item())
            done += 1
        record(epoch, float(np.mean(losses)) if losses else float("nan"))
        if steps is not None and done >= steps:
            break

    final = evaluate(model, val_set)
    report.final = {
        "token_ap": final["token_ap"],
        "loss": final["loss"],
        "condition_breakdown": final["condition_breakdown"],
        "params_total": part.params_total,
        "params_trainable": part.params_trainable,
    }
    return model, part, report
