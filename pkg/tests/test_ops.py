import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from winformer.config import BlockConfig, ConfigError, GeometryError
from winformer.ops import (
    RelativePositionBias,
    cyclic_shift,
    drop_path,
    mlp,
    patch_embed,
    patch_merge,
    relative_position_index,
    shift_attention_mask,
    shift_region_labels,
    window_attention,
    window_partition,
    window_reverse,
)
from winformer.tensor import Tensor, grad_check


def randt(shape, seed=0, requires_grad=False):
    return Tensor(np.random.default_rng(seed).normal(size=shape), requires_grad=requires_grad)


def attn_weights(channels, seed=0, requires_grad=False):
    rng = np.random.default_rng(seed)
    mk = lambda s: Tensor(rng.normal(0, 0.3, size=s), requires_grad=requires_grad)
    return dict(w_qkv=mk((channels, 3 * channels)), b_qkv=mk((3 * channels,)),
                w_out=mk((channels, channels)), b_out=mk((channels,)))


# ------------------------------------------------------------ window grids


def test_window_partition_counts():
    wins, grid = window_partition(randt((1, 14, 14, 3)), 7)
    assert wins.shape == (4, 49, 3)
    assert (grid.windows_h, grid.windows_w) == (2, 2)
    wins, grid = window_partition(randt((1, 56, 56, 3)), 7)
    assert wins.shape == (64, 49, 3)


def test_window_partition_reverse_roundtrip():
    x = randt((2, 8, 8, 4), seed=1)
    wins, grid = window_partition(x, 4)
    assert np.array_equal(window_reverse(wins, grid).data, x.data)
    x = randt((1, 56, 56, 96), seed=2)
    wins, grid = window_partition(x, 7)
    assert np.array_equal(window_reverse(wins, grid).data, x.data)


def test_partition_of_reverse_is_identity_on_windows():
    wins = randt((8, 16, 5), seed=3)
    _, grid = window_partition(randt((2, 8, 8, 5)), 4)
    back = window_partition(window_reverse(wins, grid), 4)[0]
    assert np.array_equal(back.data, wins.data)


def test_window_partition_token_order_row_major():
    h = w = 4
    x = np.arange(h * w, dtype=np.float64).reshape(1, h, w, 1)
    wins, _ = window_partition(Tensor(x), 2)
    # first window covers rows 0-1, cols 0-1 in row-major order
    assert wins.data[0, :, 0].tolist() == [0.0, 1.0, 4.0, 5.0]
    # windows ordered row-major over the grid
    assert wins.data[1, :, 0].tolist() == [2.0, 3.0, 6.0, 7.0]


def test_window_partition_indivisible():
    with pytest.raises(GeometryError):
        window_partition(randt((1, 9, 9, 2)), 4)


@settings(max_examples=40)
@given(
    st.integers(min_value=1, max_value=4),
    st.integers(min_value=1, max_value=4),
    st.integers(min_value=1, max_value=6),
    st.integers(min_value=1, max_value=3),
    st.integers(min_value=0, max_value=2**31 - 1),
)
def test_property_partition_reverse_bijection(wh, ww, m, c, seed):
    x = Tensor(np.random.default_rng(seed).normal(size=(1, wh * m, ww * m, c)))
    wins, grid = window_partition(x, m)
    assert np.array_equal(window_reverse(wins, grid).data, x.data)


# --------------------------------------------------- relative position index


def test_index_single_token():
    assert relative_position_index(1).tolist() == [[0]]


def test_index_m2_corner():
    # token (0,0) vs (1,1): delta (-1,-1) maps to row 0
    assert relative_position_index(2)[0][3] == 0


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_index_symmetry_brute_force(m):
    idx = relative_position_index(m)
    target = 2 * ((m - 1) * (2 * m - 1) + (m - 1))
    n = m * m
    for i in range(n):
        for j in range(n):
            assert idx[i][j] + idx[j][i] == target


def test_index_depends_only_on_offset():
    m = 3
    idx = relative_position_index(m)
    pos = [(r, c) for r in range(m) for c in range(m)]
    seen = {}
    for i, pi in enumerate(pos):
        for j, pj in enumerate(pos):
            delta = (pi[0] - pj[0], pi[1] - pj[1])
            assert seen.setdefault(delta, idx[i][j]) == idx[i][j]


# ----------------------------------------------------------- window attention


def test_attention_identical_tokens_give_identical_outputs():
    cfg = BlockConfig(channels=8, heads=2, window=2, pe_mode="none", conv_placement="none")
    token = np.random.default_rng(4).normal(size=(1, 1, 8))
    wins = Tensor(np.tile(token, (3, 4, 1)))
    out = window_attention(wins, cfg=cfg, **attn_weights(8, seed=5))
    spread = np.abs(out.data - out.data[:, :1, :]).max()
    assert spread < 1e-12


def test_attention_permutation_equivariance_pe_none():
    cfg = BlockConfig(channels=8, heads=2, window=2, pe_mode="none", conv_placement="none")
    weights = attn_weights(8, seed=6)
    wins = randt((4, 4, 8), seed=7)
    perm = np.array([2, 0, 3, 1])
    out = window_attention(wins, cfg=cfg, **weights)
    out_p = window_attention(Tensor(wins.data[:, perm, :]), cfg=cfg, **weights)
    assert np.allclose(out.data[:, perm, :], out_p.data, atol=1e-12)


def test_attention_rpe_breaks_permutation_equivariance():
    cfg = BlockConfig(channels=8, heads=2, window=2, pe_mode="rpe", conv_placement="none")
    weights = attn_weights(8, seed=8)
    rpe = RelativePositionBias.for_window(randt((9, 2), seed=9), 2)
    wins = randt((4, 4, 8), seed=10)
    perm = np.array([2, 0, 3, 1])
    out = window_attention(wins, cfg=cfg, rpe=rpe, **weights)
    out_p = window_attention(Tensor(wins.data[:, perm, :]), cfg=cfg, rpe=rpe, **weights)
    assert not np.allclose(out.data[:, perm, :], out_p.data)


def test_attention_rows_sum_to_one():
    cfg = BlockConfig(channels=6, heads=3, window=2, pe_mode="rpe", conv_placement="none")
    rpe = RelativePositionBias.for_window(randt((9, 3), seed=11), 2)
    _, attn = window_attention(randt((5, 4, 6), seed=12), cfg=cfg, rpe=rpe, return_attn=True, **attn_weights(6, seed=13))
    assert np.abs(attn.data.sum(axis=-1) - 1.0).max() <= 1e-6


def test_attention_rpe_bias_equal_across_windows_content_swap():
    # swapping two windows' contents swaps outputs exactly: the bias term is
    # identical for every window
    cfg = BlockConfig(channels=8, heads=2, window=2, pe_mode="rpe", conv_placement="none")
    weights = attn_weights(8, seed=14)
    rpe = RelativePositionBias.for_window(randt((9, 2), seed=15), 2)
    wins = randt((4, 4, 8), seed=16)
    swapped = Tensor(wins.data[[1, 0, 2, 3]])
    out = window_attention(wins, cfg=cfg, rpe=rpe, **weights)
    out_s = window_attention(swapped, cfg=cfg, rpe=rpe, **weights)
    assert np.array_equal(out.data[[1, 0, 2, 3]], out_s.data)


def test_attention_lepe_requires_kernel_and_changes_output():
    cfg_none = BlockConfig(channels=8, heads=2, window=2, pe_mode="none", conv_placement="none")
    cfg_lepe = BlockConfig(channels=8, heads=2, window=2, pe_mode="lepe", conv_placement="none")
    weights = attn_weights(8, seed=17)
    wins = randt((4, 4, 8), seed=18)
    with pytest.raises(Exception, match="lepe"):
        window_attention(wins, cfg=cfg_lepe, **weights)
    kernel = randt((3, 3, 8), seed=19)
    out_l = window_attention(wins, cfg=cfg_lepe, lepe_kernel=kernel, **weights)
    out_n = window_attention(wins, cfg=cfg_none, **weights)
    assert not np.allclose(out_l.data, out_n.data)


def test_attention_gradients():
    cfg = BlockConfig(channels=4, heads=2, window=2, pe_mode="lepe", conv_placement="none")
    weights = attn_weights(4, seed=20, requires_grad=True)
    kernel = randt((3, 3, 4), seed=21, requires_grad=True)
    wins = randt((2, 4, 4), seed=22, requires_grad=True)
    err = grad_check(lambda t: window_attention(t, cfg=cfg, lepe_kernel=kernel, **weights), wins)
    assert err <= 1e-5


# ------------------------------------------------------- cyclic shift + mask


def test_cyclic_shift_zero_is_identity_and_mask_zero():
    x = randt((1, 8, 8, 2), seed=23)
    assert np.array_equal(cyclic_shift(x, 0).data, x.data)
    _, grid = window_partition(x, 4)
    assert np.array_equal(shift_attention_mask(grid, 0), np.zeros((4, 16, 16)))


def test_cyclic_shift_inverse_restores_input():
    x = randt((2, 6, 6, 3), seed=24)
    assert np.array_equal(cyclic_shift(cyclic_shift(x, 2), -2).data, x.data)


def test_shift_mask_region_groups_at_most_four():
    m, s = 4, 2
    labels = shift_region_labels(2 * m, 2 * m, m, s)
    shifted = np.roll(labels, (-s, -s), axis=(0, 1))
    windows = shifted.reshape(2, m, 2, m).transpose(0, 2, 1, 3).reshape(4, m * m)
    for row in windows:
        assert len(set(row.tolist())) <= 4


def test_shift_mask_blocks_cross_region_pairs():
    x = randt((1, 8, 8, 4), seed=25)
    _, grid = window_partition(x, 4)
    mask = shift_attention_mask(grid, 2)
    labels = shift_region_labels(8, 8, 4, 2)
    shifted = np.roll(labels, (-2, -2), axis=(0, 1))
    windows = shifted.reshape(2, 4, 2, 4).transpose(0, 2, 1, 3).reshape(4, 16)
    for w in range(4):
        same = windows[w][:, None] == windows[w][None, :]
        assert np.all(mask[w][same] == 0.0)
        assert np.all(mask[w][~same] < -1e8)


def test_shift_mask_validates_range():
    _, grid = window_partition(randt((1, 8, 8, 1)), 4)
    with pytest.raises(ValueError):
        shift_attention_mask(grid, 4)


# -------------------------------------------------------------- patch embed


def test_patch_embed_output_geometry():
    x = randt((1, 224, 224, 3), seed=26)
    w = randt((48, 96), seed=27)
    out = patch_embed(x, w, Tensor(np.zeros(96)), Tensor(np.ones(96)), Tensor(np.zeros(96)))
    assert out.shape == (1, 56, 56, 96)


def test_patch_embed_zero_image_zero_bias_gives_zero_map():
    x = Tensor(np.zeros((1, 8, 8, 3)))
    w = randt((48, 16), seed=28)
    out = patch_embed(x, w, Tensor(np.zeros(16)), Tensor(np.ones(16)), Tensor(np.zeros(16)))
    assert np.array_equal(out.data, np.zeros((1, 2, 2, 16)))


def test_patch_embed_flattening_order_channel_fastest():
    # pixel (py, px, ch) of the patch lands at flat position (py*4 + px)*3 + ch
    x = np.zeros((1, 4, 4, 3))
    x[0, 1, 2, 1] = 1.0
    flat_pos = (1 * 4 + 2) * 3 + 1
    w = np.zeros((48, 1))
    w[flat_pos, 0] = 5.0
    out = patch_embed(Tensor(x), Tensor(w), Tensor(np.zeros(1)), Tensor(np.ones(1)), Tensor(np.zeros(1)))
    # layer_norm of a single channel zeroes it; check the pre-norm path via linearity instead
    x2 = np.zeros((1, 4, 4, 3))
    w2 = np.zeros((48, 2))
    w2[flat_pos, 0] = 5.0
    x2[0, 1, 2, 1] = 1.0
    out2 = patch_embed(Tensor(x2), Tensor(w2), Tensor(np.zeros(2)), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    # channel 0 got 5.0 pre-norm, channel 1 stayed 0: post-norm they differ
    assert out2.data[0, 0, 0, 0] != out2.data[0, 0, 0, 1]


def test_patch_embed_indivisible():
    with pytest.raises(GeometryError):
        patch_embed(randt((1, 10, 10, 3)), randt((48, 8)), Tensor(np.zeros(8)), Tensor(np.ones(8)), Tensor(np.zeros(8)))


# -------------------------------------------------------------- patch merge


def test_patch_merge_geometry():
    x = randt((1, 56, 56, 96), seed=29)
    out = patch_merge(x, Tensor(np.ones(384)), Tensor(np.zeros(384)), randt((384, 192), seed=30))
    assert out.shape == (1, 28, 28, 192)


def test_patch_merge_constant_map_stays_spatially_constant():
    x = Tensor(np.tile(np.random.default_rng(31).normal(size=(1, 1, 1, 8)), (1, 4, 4, 1)))
    out = patch_merge(x, Tensor(np.ones(32)), Tensor(np.zeros(32)), randt((32, 16), seed=32)).data
    assert np.abs(out - out[:, :1, :1, :]).max() < 1e-12


def test_patch_merge_concat_order():
    # neighborhood features concatenate as (0,0),(0,1),(1,0),(1,1)
    x = np.zeros((1, 2, 2, 1))
    x[0, 0, 0, 0], x[0, 0, 1, 0], x[0, 1, 0, 0], x[0, 1, 1, 0] = 1.0, 2.0, 3.0, 4.0
    gamma, beta = Tensor(np.ones(4)), Tensor(np.zeros(4))
    # identity-ish projection picks out each concatenated slot
    out = patch_merge(Tensor(x), gamma, beta, Tensor(np.eye(4)[:, :2] * 0 + np.eye(4)[:, :2]))
    # verify via the normalized concat: slots must be increasing 1,2,3,4 -> strictly increasing post-norm
    normed = (np.array([1.0, 2.0, 3.0, 4.0]) - 2.5) / np.sqrt(1.25 + 1e-5)
    direct = patch_merge(Tensor(x), gamma, beta, Tensor(np.eye(4))).data[0, 0, 0]
    assert np.allclose(direct, normed, atol=1e-10)


def test_patch_merge_odd_extent():
    with pytest.raises(GeometryError):
        patch_merge(randt((1, 3, 4, 2)), Tensor(np.ones(8)), Tensor(np.zeros(8)), randt((8, 4)))


# --------------------------------------------------------------------- mlp


def test_mlp_zero_params_zero_output():
    x = randt((2, 3, 8), seed=33)
    z = lambda s: Tensor(np.zeros(s))
    out = mlp(x, z((8, 32)), z((32,)), z((32, 8)), z((8,)))
    assert np.array_equal(out.data, np.zeros_like(x.data))


def test_mlp_gradients():
    c, r = 6, 4
    w1 = randt((c, r * c), seed=34, requires_grad=True)
    b1 = randt((r * c,), seed=35, requires_grad=True)
    w2 = randt((r * c, c), seed=36, requires_grad=True)
    b2 = randt((c,), seed=37, requires_grad=True)
    x = randt((1, 4, c), seed=38, requires_grad=True)
    assert grad_check(lambda t: mlp(t, w1, b1, w2, b2), x) <= 1e-5


def test_mlp_parameter_count_formula():
    # C*rC + rC + rC*C + C for C=96, r=4
    c, r = 96, 4
    assert c * r * c + r * c + r * c * c + c == 74208


# --------------------------------------------------------------- drop path


def test_drop_path_rate_zero_identity_both_modes():
    x = randt((4, 2, 2, 3), seed=39)
    rng = np.random.default_rng(0)
    assert drop_path(x, 0.0, training=True, rng=rng) is x
    assert drop_path(x, 0.0, training=False) is x


def test_drop_path_eval_identity_any_rate():
    x = randt((4, 2, 2, 3), seed=40)
    assert drop_path(x, 0.9, training=False) is x


def test_drop_path_preserves_expectation():
    x = Tensor(np.full((100_000, 1, 1, 1), 2.0))
    out = drop_path(x, 0.3, training=True, rng=np.random.default_rng(41))
    assert abs(out.data.mean() / 2.0 - 1.0) <= 0.01


def test_drop_path_rejects_rate_one():
    with pytest.raises(ValueError):
        drop_path(randt((2, 1, 1, 1)), 1.0, training=True, rng=np.random.default_rng(0))


# ------------------------------------------------------------ block config


def test_block_config_validation():
    with pytest.raises(ConfigError):
        BlockConfig(channels=10, heads=3)
    with pytest.raises(ConfigError):
        BlockConfig(channels=8, heads=2, conv_kernel=4)
    with pytest.raises(ConfigError):
        BlockConfig(channels=8, heads=2, pe_mode="absolute")
    with pytest.raises(ConfigError):
        BlockConfig(channels=8, heads=2, drop_path_rate=1.0)
