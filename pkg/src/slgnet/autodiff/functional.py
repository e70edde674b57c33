"""Fused kernels with hand-written backward passes."""

from __future__ import annotations


import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import sparse

from .tensor import DimensionError, Tensor, _norm_axis, _wrap, make_node, unbroadcast


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` over the last axis; weight is [in, out]."""
    x, weight = _wrap(x), _wrap(weight)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    parents = [x, weight]
    if bias is not None:
        bias = _wrap(bias)
        out = out + bias.data
        parents.append(bias)
    out = out.reshape(lead + (weight.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_node(out, parents, backward, "linear")


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    ax = _norm_axis(axis, a.ndim)[0]
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return make_node(out, (a,), backward, "softmax")


def layer_norm(x, weight=None, bias=None, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then apply optional affine parameters."""
    x = _wrap(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    parents = [x]
    if weight is not None:
        weight = _wrap(weight)
        out = out * weight.data
        parents.append(weight)
    if bias is not None:
        bias = _wrap(bias)
        out = out + bias.data
        parents.append(bias)
    n = x.shape[-1]

    def backward(g):
        gw = gb = None
        if weight is not None:
            gw = unbroadcast(g * xhat, weight.shape)
            gxhat = g * weight.data
        else:
            gxhat = g
        if bias is not None:
            gb = unbroadcast(g, bias.shape)
        gx = inv / n * (n * gxhat - gxhat.sum(-1, keepdims=True) - xhat * (gxhat * xhat).sum(-1, keepdims=True))
        grads = [gx]
        if weight is not None:
            grads.append(gw)
        if bias is not None:
            grads.append(gb)
        return tuple(grads)

    return make_node(out, parents, backward, "layer_norm")


def pad2d(x, pad: int, mode: str = "replicate") -> Tensor:
    """Pad the last two axes by ``pad`` on each side ('replicate' or 'zero')."""
    x = _wrap(x)
    if pad == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    np_mode = {"replicate": "edge", "zero": "constant"}[mode]
    out = np.pad(x.data, widths, mode=np_mode)
    h, w = x.shape[-2:]

    def backward(g):
        if mode == "zero":
            return (g[..., pad : pad + h, pad : pad + w].copy(),)
        # fold the replicated border back onto the edge rows/cols
        acc = g[..., pad : pad + h, :].copy()
        acc[..., 0, :] += g[..., :pad, :].sum(-2)
        acc[..., h - 1, :] += g[..., pad + h :, :].sum(-2)
        res = acc[..., pad : pad + w].copy()
        res[..., 0] += acc[..., :pad].sum(-1)
        res[..., w - 1] += acc[..., pad + w :].sum(-1)
        return (res,)

    return make_node(out, (x,), backward, "pad2d")


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [N,C,H,W] with [Co,C,k,k], zero padding."""
    x, kernel = _wrap(x), _wrap(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape}, {kernel.shape}")
    n, c, h, w = x.shape
    co, ci, kh, kw = kernel.shape
    if ci != c:
        raise DimensionError(f"conv2d: input has {c} channels, kernel expects {ci}")
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be odd and square, got {kh}x{kw}")
    if stride < 1:
        raise DimensionError("conv2d: stride must be >= 1")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: input {h}x{w} too small for kernel {kh}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    # windows: [N, C, Ho, Wo, k, k]
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.einsum("nchwij,ocij->nohw", cols, kernel.data, optimize=True)
    parents = [x, kernel]
    if bias is not None:
        bias = _wrap(bias)
        out = out + bias.data.reshape(1, co, 1, 1)
        parents.append(bias)

    def backward(g):
        gk = np.einsum("nohw,nchwij->ocij", g, cols, optimize=True) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            # [N, C, Ho, Wo, k, k] contributions, scattered per kernel tap
            contrib = np.einsum("nohw,ocij->nchwij", g, kernel.data, optimize=True)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += contrib[..., i, j]
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return make_node(out, parents, backward, "conv2d")


def _bilinear_setup(h: int, w: int, coords: np.ndarray):
    """Clamp pixel coordinates and return corner indices and weights."""
    cx, cy = coords[..., 0], coords[..., 1]
    x = np.clip(cx, 0.0, w - 1)
    y = np.clip(cy, 0.0, h - 1)
    x0 = np.minimum(np.floor(x), max(w - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(y), max(h - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = x - x0
    wy = y - y0
    inside_x = (cx > 0.0) & (cx < w - 1)
    inside_y = (cy > 0.0) & (cy < h - 1)
    return x0, x1, y0, y1, wx, wy, inside_x, inside_y


def bilinear_gather(maps, coords) -> Tensor:
    """Sample channel-last maps [N,H,W,C] at pixel coords [N,P,2] (x, y) -> [N,P,C].

    Pixel (i, j) has its center at coordinate (x=j, y=i). Coordinates outside
    the grid are clamped to the border (replication), so the coordinate
    gradient is zero there while the value gradient stays on the edge pixels.
    """
    maps, coords = _wrap(maps), _wrap(coords)
    if maps.ndim != 4 or coords.ndim != 3 or coords.shape[-1] != 2 or coords.shape[0] != maps.shape[0]:
        raise DimensionError(f"bilinear_gather: bad shapes {maps.shape}, {coords.shape}")
    n, h, w, c = maps.shape
    p = coords.shape[1]
    x0, x1, y0, y1, wx, wy, inside_x, inside_y = _bilinear_setup(h, w, coords.data)
    # Sampling is a sparse [N*P, N*H*W] interpolation matrix; the value
    # gradient is its transpose and the coordinate gradients are the
    # matrices of the x- and y-derivatives of the corner weights.
    base = (np.arange(n) * h * w)[:, None]
    cols = np.stack([base + y0 * w + x0, base + y0 * w + x1, base + y1 * w + x0, base + y1 * w + x1], -1)
    rows = np.broadcast_to(np.arange(n * p).reshape(n, p, 1), cols.shape)
    flat_maps = maps.data.reshape(n * h * w, c)

    def interp(vals):
        flat = (vals.reshape(-1), (rows.reshape(-1), cols.reshape(-1)))
        return sparse.csr_matrix(flat, shape=(n * p, n * h * w))

    ux, uy = 1.0 - wx, 1.0 - wy
    weights = interp(np.stack([uy * ux, uy * wx, wy * ux, wy * wx], -1))
    out = (weights @ flat_maps).reshape(n, p, c).astype(maps.data.dtype, copy=False)

    def backward(g):
        gm = gc = None
        g2 = g.reshape(n * p, c)
        if maps.requires_grad:
            gm = (weights.T @ g2).reshape(n, h, w, c)
        if coords.requires_grad:
            ddx = interp(np.stack([-uy, uy, -wy, wy], -1))
            ddy = interp(np.stack([-ux, -wx, ux, wx], -1))
            gx = np.einsum("pc,pc->p", g2, ddx @ flat_maps).reshape(n, p) * inside_x
            gy = np.einsum("pc,pc->p", g2, ddy @ flat_maps).reshape(n, p) * inside_y
            gc = np.stack([gx, gy], axis=-1)
        return gm, gc

    return make_node(out, (maps, coords), backward, "bilinear_gather")


def bilinear_sample(feature_map, points) -> Tensor:
    """Sample a [C,H,W] map at normalized points [P,2] in [0,1] -> [P,C].

    Normalized (x, y) maps to pixel coordinates (x*W - 0.5, y*H - 0.5), so the
    center of pixel (i, j) sits at ((j + 0.5)/W, (i + 0.5)/H).
    """
    feature_map, points = _wrap(feature_map), _wrap(points)
    if feature_map.ndim != 3 or points.ndim != 2 or points.shape[1] != 2:
        raise DimensionError(f"bilinear_sample: bad shapes {feature_map.shape}, {points.shape}")
    _, h, w = feature_map.shape
    scale = np.array([w, h], dtype=points.data.dtype)
    pix = points * scale - 0.5
    maps = feature_map.transpose((1, 2, 0)).reshape((1, h, w, feature_map.shape[0]))
    out = bilinear_gather(maps, pix.reshape((1,) + points.shape))
    return out.reshape((points.shape[0], feature_map.shape[0]))


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy, evaluated in the overflow-safe form."""
    logits = _wrap(logits)
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=logits.data.dtype)
    if y.shape != logits.shape:
        raise DimensionError(f"bce: logits {logits.shape} vs targets {y.shape}")
    x = logits.data
    per = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    out = np.asarray(per.mean())
    prob = 0.5 * (1.0 + np.tanh(0.5 * x))

    def backward(g):
        return (g * (prob - y) / x.size,)

    return make_node(out, (logits,), backward, "bce_with_logits")
