import numpy as np
import pytest

from slgnet.autodiff import DimensionError, Tensor
from slgnet.backbone import Backbone, BackboneConfig, TokenGrid, init_frozen


def vit_param_count(image, patch, depth, width, mlp_ratio, channels):
    """Closed-form count, term by term."""
    tokens = (image // patch) ** 2
    embed = channels * patch * patch * width + width
    pos = tokens * width
    norm = 2 * width
    attn = (width * 3 * width + 3 * width) + (width * width + width)
    mlp = (width * mlp_ratio * width + mlp_ratio * width) + (mlp_ratio * width * width + width)
    return embed + pos + depth * (2 * norm + attn + mlp) + norm


def test_default_parameter_count():
    bb = init_frozen(BackboneConfig(), seed=0)
    assert vit_param_count(64, 8, 4, 64, 4, 4) == 220_608
    assert bb.num_parameters() == 220_608


def test_coarse_grid_parameter_count_and_grid():
    cfg = BackboneConfig.coarse_grid()
    assert cfg.grid == 4 and cfg.image_size // cfg.grid == 16
    assert Backbone(cfg).num_parameters() == vit_param_count(64, 16, 4, 64, 4, 4)


def test_same_seed_bit_identical():
    a, b = init_frozen(BackboneConfig(), 3), init_frozen(BackboneConfig(), 3)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    assert all(not p.requires_grad for _, p in a.named_parameters())


@pytest.mark.parametrize(
    "kwargs",
    [dict(image_size=60, patch_size=8), dict(width=30, heads=4), dict(depth=0)],
)
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        BackboneConfig(**kwargs)


def test_token_count():
    bb = init_frozen(BackboneConfig())
    grid = bb.patch_embed(np.zeros((2, 4, 64, 64)))
    assert grid.tokens.shape == (2, 64, 64) and (grid.grid_h, grid.grid_w) == (8, 8)


def test_zero_image_gives_position_plus_bias():
    bb = init_frozen(BackboneConfig())
    tokens = bb.patch_embed(np.zeros((1, 4, 64, 64))).tokens.data[0]
    p = bb.param_dict()
    np.testing.assert_array_equal(tokens, p["pos_embed"].data + p["patch_embed.bias"].data)


def test_patch_permutation_is_equivariant():
    rng = np.random.default_rng(0)
    bb = init_frozen(BackboneConfig())
    img = rng.normal(size=(1, 4, 64, 64))
    swapped = img.copy()
    # swap patch (0, 1) with patch (5, 3)
    a = (slice(None), slice(None), slice(0, 8), slice(8, 16))
    b = (slice(None), slice(None), slice(40, 48), slice(24, 32))
    swapped[a], swapped[b] = img[b], img[a]
    t0 = bb.patch_embed(img, with_position=False).tokens.data[0]
    t1 = bb.patch_embed(swapped, with_position=False).tokens.data[0]
    perm = np.arange(64)
    perm[[1, 5 * 8 + 3]] = perm[[5 * 8 + 3, 1]]
    np.testing.assert_array_equal(t1, t0[perm])


def test_patch_embed_rejects_wrong_input():
    bb = init_frozen(BackboneConfig())
    with pytest.raises(DimensionError):
        bb.patch_embed(np.zeros((1, 3, 64, 64)))
    with pytest.raises(DimensionError):
        bb.patch_embed(np.zeros((1, 4, 32, 32)))


def test_attention_rows_sum_to_one_and_shape_kept():
    rng = np.random.default_rng(1)
    bb = init_frozen(BackboneConfig())
    grid = bb.patch_embed(rng.normal(size=(2, 4, 64, 64)))
    _, weights = bb.attention(0, grid.tokens, return_weights=True)
    np.testing.assert_allclose(weights.data.sum(-1), 1.0, atol=1e-10)
    assert bb.run_block(0, grid).tokens.shape == grid.tokens.shape


def test_single_token_attention_is_identity_mixing():
    bb = init_frozen(BackboneConfig(image_size=8, patch_size=8, depth=1, width=16, heads=2))
    x = Tensor(np.random.default_rng(2).normal(size=(3, 1, 16)))
    _, weights = bb.attention(0, x, return_weights=True)
    assert np.array_equal(weights.data, np.ones((3, 2, 1, 1)))


def test_block_index_out_of_range():
    bb = init_frozen(BackboneConfig())
    grid = bb.patch_embed(np.zeros((1, 4, 64, 64)))
    with pytest.raises(IndexError):
        bb.run_block(4, grid)
    with pytest.raises(IndexError):
        bb.run_block(-1, grid)


def test_reference_points():
    grid = TokenGrid(Tensor(np.zeros((1, 6, 2))), 2, 3)
    ref = grid.reference_points()
    assert ref[0].tolist() == [1 / 6, 0.25]
    assert ref[5].tolist() == [5 / 6, 0.75]


def test_gradient_flows_through_frozen_blocks():
    rng = np.random.default_rng(3)
    bb = init_frozen(BackboneConfig())
    delta = Tensor(rng.normal(size=(1, 64, 64)) * 0.1, requires_grad=True)
    grid = bb.patch_embed(rng.normal(size=(1, 4, 64, 64)))
    grid = grid.with_tokens(grid.tokens + delta)
    for i in range(bb.cfg.depth):
        grid = bb.run_block(i, grid)
    (bb.final_norm(grid).tokens * rng.normal(size=(1, 64, 64))).sum().backward()
    assert np.abs(delta.grad).min() > 0
    assert all(p.grad is None for _, p in bb.named_parameters())


def test_forward_deterministic():
    img = np.random.default_rng(4).normal(size=(1, 4, 64, 64))
    a = init_frozen(BackboneConfig(), 7).forward(img).tokens.data
    b = init_frozen(BackboneConfig(), 7).forward(img).tokens.data
    assert a.tobytes() == b.tobytes()
