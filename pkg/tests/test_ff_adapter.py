import numpy as np
import pytest

from slgnet.autodiff import DimensionError, Tensor
from slgnet.backbone import BackboneConfig, TokenGrid
from slgnet.ff_adapter import FFAdapter, SparseAttention, channels_last, phi_map
from slgnet.harness.model import ModelConfig, SLGNet

from oracles import random_instance, sparse_attention_oracle


def test_phi_map_examples():
    np.testing.assert_array_equal(phi_map([[0.5, 0.5]], (8, 8)), [[3.5, 3.5]])
    np.testing.assert_array_equal(phi_map([[0.0, 0.0], [1.0, 1.0]], (4, 6)), [[-0.5, -0.5], [5.5, 3.5]])


def test_phi_map_token_centers_round_trip():
    grid = TokenGrid(Tensor(np.zeros((1, 16, 1))), 4, 4)
    px = phi_map(grid.reference_points(), (4, 4))
    rows, cols = np.divmod(np.arange(16), 4)
    np.testing.assert_allclose(px, np.stack([cols, rows], 1), atol=1e-15)
    np.testing.assert_allclose((px + 0.5) / 4, grid.reference_points(), atol=1e-15)


def test_sparse_attention_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        sa, grid, levels = random_instance(rng)
        got = sa.attend(grid, [Tensor(l) for l in levels]).data
        p = {name: t.data for name, t in sa.named_parameters()}
        ref = sparse_attention_oracle(grid.tokens.data, (grid.grid_h, grid.grid_w), levels, p)
        np.testing.assert_allclose(got, ref, atol=1e-10, rtol=0)


def test_constant_pyramid_gives_constant_output():
    rng = np.random.default_rng(1)
    sa, grid, levels = random_instance(rng)
    d = grid.tokens.shape[-1]
    c = rng.normal(size=d)
    const = [np.broadcast_to(c, l.shape).copy() for l in levels]
    out = sa.attend(grid, [Tensor(l) for l in const]).data
    p = sa.param_dict()
    expected = p["gate"].data[0] * (c @ p["value.weight"].data + p["value.bias"].data)
    np.testing.assert_allclose(out, np.broadcast_to(expected, out.shape), atol=1e-12)


def test_one_hot_level_at_reference_point():
    d = 3
    sa = SparseAttention(d, points=2, extents=[(4, 4), (2, 2), (1, 1)])
    p = sa.param_dict()
    p["value.weight"].data[...] = np.eye(d)
    p["gate"].data[...] = 1.0
    levels = [np.zeros((1, 4, 4, d)), np.zeros((1, 2, 2, d)), np.zeros((1, 1, 1, d))]
    levels[0][0, 1, 2, 0] = 6.0  # token (row 1, col 2) of a 4x4 grid
    grid = TokenGrid(Tensor(np.zeros((1, 16, d))), 4, 4)
    out = sa.attend(grid, [Tensor(l) for l in levels]).data[0]
    # zero offsets sample the pixel under each token; the weights are 1/6 per point
    assert out[1 * 4 + 2, 0] == pytest.approx(6.0 * 2 / 6)
    assert np.count_nonzero(out) == 1


def test_sampling_weights_sum_to_one_over_levels_and_points():
    rng = np.random.default_rng(2)
    sa, grid, _ = random_instance(rng)
    _, weights = sa.sampling(grid.tokens)
    np.testing.assert_allclose(weights.data.sum(axis=(2, 3)), 1.0, atol=1e-12)


def test_adapter_injection_is_identity_at_init():
    rng = np.random.default_rng(3)
    ff = FFAdapter(8, 3, [(4, 4), (2, 2), (1, 1)], points=2, evolver_hidden=4)
    grid = TokenGrid(Tensor(rng.normal(size=(2, 16, 8))), 4, 4)
    levels = [Tensor(rng.normal(size=(2, h, w, 8))) for h, w in [(4, 4), (2, 2), (1, 1)]]
    for i in range(3):
        assert np.array_equal(ff.inject(i, grid, levels).tokens.data, grid.tokens.data)
    for i in (1, 2):
        for a, b in zip(ff.evolve(i, levels), levels):
            assert np.array_equal(a.data, b.data)


def test_injection_is_residual():
    rng = np.random.default_rng(4)
    sa, grid, levels = random_instance(rng)
    ff = FFAdapter(grid.tokens.shape[-1], 1, sa.extents, points=sa.points)
    ff.attn[0] = sa
    delta = sa.attend(grid, [Tensor(l) for l in levels]).data
    out = ff.inject(0, grid, [Tensor(l) for l in levels]).tokens.data
    np.testing.assert_allclose(out, grid.tokens.data + delta, atol=1e-14)


def test_evolvers_are_distinct_and_indexed():
    ff = FFAdapter(8, 4, [(4, 4), (2, 2), (1, 1)])
    assert sorted(ff.evolvers) == [1, 2, 3]
    w = [ff.evolvers[i].param_dict()["fc1.weight"].data for i in (1, 2, 3)]
    assert not np.array_equal(w[0], w[1]) and not np.array_equal(w[1], w[2])
    with pytest.raises(IndexError):
        ff.evolve(0, [])


def test_attend_rejects_mismatched_levels():
    rng = np.random.default_rng(5)
    sa, grid, levels = random_instance(rng)
    with pytest.raises(DimensionError):
        sa.attend(grid, [Tensor(l) for l in levels[:2]])
    bad = [Tensor(np.zeros((l.shape[0], l.shape[1] + 1, l.shape[2], l.shape[3]))) for l in levels]
    with pytest.raises(DimensionError):
        sa.attend(grid, bad)


def test_invalid_offset_units():
    with pytest.raises(ValueError):
        SparseAttention(4, offset_units="degrees")


def test_normalized_offsets_match_pixel_offsets_after_rescaling():
    rng = np.random.default_rng(6)
    sa_n, grid, levels = random_instance(rng, "normalized")
    sa_p = SparseAttention(sa_n.width, sa_n.points, sa_n.extents, "pixel")
    pn, pp = sa_n.param_dict(), sa_p.param_dict()
    for name in pp:
        pp[name].data[...] = pn[name].data
    offsets, _ = sa_n.sampling(grid.tokens)
    for l, (h, w) in enumerate(sa_n.extents):
        scale = pn["offset_scale"].data[l]
        loc_n = sa_n.locations(grid, offsets, l).data
        loc_p = sa_p.locations(grid, offsets * (scale * np.array([w, h])), l).data
        np.testing.assert_allclose(loc_n, loc_p, atol=1e-12)


def test_every_adapter_parameter_receives_gradient():
    rng = np.random.default_rng(7)
    sa, grid, levels = random_instance(rng)
    lv = [Tensor(l, requires_grad=True) for l in levels]
    (sa.attend(grid, lv) * rng.normal(size=grid.tokens.shape)).sum().backward()
    for name, p in sa.named_parameters():
        assert p.grad is not None and np.abs(p.grad).sum() > 0, name


def test_full_model_equals_backbone_plus_head_at_init():
    cfg = ModelConfig(backbone=BackboneConfig(image_size=32, patch_size=8, depth=2, width=16, heads=2), text_dim=4, text_len=5)
    rng = np.random.default_rng(8)
    vis, ir = rng.random((2, 3, 32, 32)), rng.random((2, 1, 32, 32))
    text = rng.normal(size=(2, 5, 16))
    model = SLGNet(cfg, seed=9)
    got = model.forward(vis, ir, text).data
    bb = model.backbone
    grid = bb.patch_embed(np.concatenate([vis, ir], axis=1))
    for i in range(bb.cfg.depth):
        grid = bb.run_block(i, grid)
    ref = model.head(bb.final_norm(grid).tokens).data
    np.testing.assert_allclose(got, ref, atol=1e-12, rtol=0)


def test_channels_last():
    x = Tensor(np.arange(24.0).reshape(1, 2, 3, 4))
    (y,) = channels_last([x])
    assert y.shape == (1, 3, 4, 2) and y.data[0, 1, 2, 1] == x.data[0, 1, 1, 2]
