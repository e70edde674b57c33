"""Central finite differences against the tape's analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .tensor import Tensor, no_grad

# Below this magnitude a gradient entry is compared absolutely, not relatively.
REL_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    n_checked: int
    worst: List[Tuple[str, float, float, float]] = field(default_factory=list)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Dict[str, Tensor],
    n_samples: Optional[int] = None,
    eps: float = 1e-5,
    rng: Optional[np.random.Generator] = None,
    name: str = "graph",
) -> CheckResult:
    """Compare backward() against central differences on sampled entries.

    ``loss_fn`` must rebuild the forward pass from the current parameter data
    each call. When ``n_samples`` is set, that many (param, index) entries are
    drawn uniformly over all entries of ``params``; otherwise every entry is
    checked.
    """
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}

    names = list(params)
    sizes = np.array([params[k].size for k in names])
    total = int(sizes.sum())
    if n_samples is None or n_samples >= total:
        flat_ids = np.arange(total)
    else:
        flat_ids = np.sort(rng.choice(total, size=n_samples, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    errors = []
    with no_grad():
        for fid in flat_ids:
            which = int(np.searchsorted(offsets, fid, side="right") - 1)
            key = names[which]
            local = int(fid - offsets[which])
            flat = params[key].data.reshape(-1)
            orig = flat[local]
            flat[local] = orig + eps
            up = loss_fn().item()
            flat[local] = orig - eps
            down = loss_fn().item()
            flat[local] = orig
            numeric = (up - down) / (2 * eps)
            a = float(analytic[key].reshape(-1)[local])
            errors.append((f"{key}[{local}]", float(relative_error(a, numeric)), a, numeric))

    errors.sort(key=lambda e: e[1], reverse=True)
    worst = errors[:5]
    return CheckResult(name, errors[0][1] if errors else 0.0, len(errors), worst)


def numeric_grad(fn: Callable[[], Tensor], target: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Dense central-difference gradient of ``fn`` w.r.t. every entry of ``target``."""
    out = np.zeros_like(target.data)
    flat = target.data.reshape(-1)
    gflat = out.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn().item()
            flat[i] = orig - eps
            down = fn().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
    return out


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    return float(relative_error(analytic, numeric, floor).max())


def grads_of(loss: Tensor, tensors: Sequence[Tensor]) -> List[np.ndarray]:
    for t in tensors:
        t.grad = None
    loss.backward()
    return [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
