"""Slow, loop-based reference implementations and random instances shared by the test files."""

import numpy as np

from slgnet.autodiff import Tensor
from slgnet.backbone import TokenGrid
from slgnet.ff_adapter import SparseAttention
from slgnet.structure import SSIM_K1, SSIM_K2, SSIM_WINDOW


def ssim_oracle(m, r, k1=SSIM_K1, k2=SSIM_K2, window=SSIM_WINDOW):
    """Window-by-window SSIM on a [h, w] pair with replicated borders."""
    h, w = m.shape
    half = window // 2
    mp, rp = np.pad(m, half, mode="edge"), np.pad(r, half, mode="edge")
    L = max(r.max() - r.min(), 1e-8)
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            a = mp[i : i + window, j : j + window]
            b = rp[i : i + window, j : j + window]
            mu_a, mu_b = a.mean(), b.mean()
            var_a = (a * a).mean() - mu_a**2
            var_b = (b * b).mean() - mu_b**2
            cov = (a * b).mean() - mu_a * mu_b
            out[i, j] = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
                (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
            )
    return out


def bilinear_point(fmap, x, y):
    """fmap [h, w, C] sampled at pixel (x, y), coordinates clamped to the grid."""
    h, w = fmap.shape[:2]
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    ax, ay = x - x0, y - y0
    return (
        (1 - ay) * (1 - ax) * fmap[y0, x0]
        + (1 - ay) * ax * fmap[y0, x1]
        + ay * (1 - ax) * fmap[y1, x0]
        + ay * ax * fmap[y1, x1]
    )


def sparse_attention_oracle(tokens, grid_hw, levels, p):
    """Loop over queries, levels and points with explicit offset and weight heads.

    tokens [N,T,D]; levels channel-last [N,h,w,D]; p maps parameter names to arrays.
    """
    n, t, d = tokens.shape
    gh, gw = grid_hw
    n_levels = len(levels)
    k = p["weight.bias"].size // n_levels
    out = np.zeros((n, t, d))
    for b in range(n):
        for q in range(t):
            z = tokens[b, q]
            off = (z @ p["offset.weight"] + p["offset.bias"]).reshape(n_levels, k, 2)
            logits = z @ p["weight.weight"] + p["weight.bias"]
            a = np.exp(logits - logits.max())
            a = (a / a.sum()).reshape(n_levels, k)
            rx, ry = (q % gw + 0.5) / gw, (q // gw + 0.5) / gh
            acc = np.zeros(d)
            for l in range(n_levels):
                h, w = levels[l].shape[1:3]
                for j in range(k):
                    x = rx * w - 0.5 + off[l, j, 0]
                    y = ry * h - 0.5 + off[l, j, 1]
                    acc += a[l, j] * (bilinear_point(levels[l][b], x, y) @ p["value.weight"] + p["value.bias"])
            out[b, q] = p["gate"][0] * acc
    return out


def ap_oracle(scores, labels):
    """AP by sweeping every distinct threshold: sum over positives of precision at their rank."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    total = 0.0
    for s in scores[labels]:
        at_or_above = scores >= s
        total += labels[at_or_above].sum() / at_or_above.sum()
    return total / labels.sum()


def random_instance(rng, offset_units="pixel"):
    gh, gw = rng.integers(1, 5, 2)
    t = int(gh * gw)
    d = int(rng.integers(2, 6))
    k = int(rng.integers(1, 5))
    n = int(rng.integers(1, 3))
    extents = [tuple(int(v) for v in rng.integers(1, 7, 2)) for _ in range(3)]
    sa = SparseAttention(d, k, extents, offset_units, seed=int(rng.integers(1 << 30)))
    for name, p in sa.named_parameters():
        p.data[...] = rng.normal(size=p.shape) * (2.0 if name.startswith("offset") else 1.0)
    tokens = rng.normal(size=(n, t, d))
    levels = [rng.normal(size=(n, h, w, d)) for h, w in extents]
    return sa, TokenGrid(Tensor(tokens), int(gh), int(gw)), levels
