"""Four-stage hierarchical model assembly: block forward with all conv
placements and the alternating-shift variant, whole-model forward, and
deterministic parameter initialization.

Parameters live in a flat insertion-ordered dict of named tensors; names are
dotted paths like ``stage0.block1.attn.w_qkv`` so the same dict serializes
directly as a checkpoint and feeds the optimizer.
"""

from __future__ import annotations

import numpy as np

from .config import BlockConfig, ModelConfig
from .ops import (
    RelativePositionBias,
    cyclic_shift,
    drop_path,
    mlp,
    patch_embed,
    patch_merge,
    shift_attention_mask,
    window_attention,
    window_partition,
    window_reverse,
)
from .tensor import NumericsError, Tensor, add, dwconv2d, layer_norm, linear, reduce_mean

Params = dict[str, Tensor]


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) with draws outside 2 sigma redrawn."""
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return (x * std).astype(dtype)


def _block_param_shapes(cfg: BlockConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init) triples for one block, in forward order.
    init is one of trunc, zeros, ones."""
    c, hidden = cfg.channels, cfg.mlp_hidden
    shapes: list[tuple[str, tuple[int, ...], str]] = [
        ("norm_attn.gamma", (c,), "ones"),
        ("norm_attn.beta", (c,), "zeros"),
        ("attn.w_qkv", (c, 3 * c), "trunc"),
        ("attn.b_qkv", (3 * c,), "zeros"),
        ("attn.w_out", (c, c), "trunc"),
        ("attn.b_out", (c,), "zeros"),
    ]
    if cfg.pe_mode == "rpe":
        shapes.append(("attn.rpe_table", ((2 * cfg.window - 1) ** 2, cfg.heads), "zeros"))
    elif cfg.pe_mode == "lepe":
        shapes.append(("attn.lepe_kernel", (3, 3, c), "trunc"))
    if cfg.has_conv:
        shapes += [
            ("norm_conv.gamma", (c,), "ones"),
            ("norm_conv.beta", (c,), "zeros"),
            ("conv.kernel", (cfg.conv_kernel, cfg.conv_kernel, c), "trunc"),
        ]
        if cfg.conv_bias:
            shapes.append(("conv.bias", (c,), "zeros"))
    shapes += [
        ("norm_mlp.gamma", (c,), "ones"),
        ("norm_mlp.beta", (c,), "zeros"),
        ("mlp.w1", (c, hidden), "trunc"),
        ("mlp.b1", (hidden,), "zeros"),
        ("mlp.w2", (hidden, c), "trunc"),
        ("mlp.b2", (c,), "zeros"),
    ]
    return shapes


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Every parameter of the model, in construction order."""
    c0 = cfg.base_channels
    shapes: list[tuple[str, tuple[int, ...], str]] = [
        ("patch_embed.proj.w", (48, c0), "trunc"),
        ("patch_embed.proj.b", (c0,), "zeros"),
        ("patch_embed.norm.gamma", (c0,), "ones"),
        ("patch_embed.norm.beta", (c0,), "zeros"),
    ]
    for i in range(cfg.num_stages):
        for j in range(cfg.depths[i]):
            block = cfg.block_config(i, j)
            prefix = f"stage{i}.block{j}"
            shapes += [(f"{prefix}.{name}", shape, init) for name, shape, init in _block_param_shapes(block)]
        if i + 1 < cfg.num_stages:
            d = cfg.stage_channels(i)
            shapes += [
                (f"merge{i}.norm.gamma", (4 * d,), "ones"),
                (f"merge{i}.norm.beta", (4 * d,), "zeros"),
                (f"merge{i}.proj.w", (4 * d, 2 * d), "trunc"),
            ]
    c_last = cfg.stage_channels(cfg.num_stages - 1)
    shapes += [
        ("head.norm.gamma", (c_last,), "ones"),
        ("head.norm.beta", (c_last,), "zeros"),
        ("head.w", (c_last, cfg.num_classes), "trunc"),
        ("head.b", (cfg.num_classes,), "zeros"),
    ]
    return shapes


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> Params:
    """Deterministic-in-seed initialization: truncated normal (std 0.02,
    cut at 2 sigma) for weights and depthwise kernels, zeros for biases and
    relative-position tables, ones/zeros for layer-norm gamma/beta."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)
    params: Params = {}
    for name, shape, init in param_shapes(cfg):
        if init == "trunc":
            data = truncated_normal(rng, shape, std=0.02, dtype=dtype)
        elif init == "ones":
            data = np.ones(shape, dtype=dtype)
        else:
            data = np.zeros(shape, dtype=dtype)
        params[name] = Tensor(data, requires_grad=True)
    return params


def zero_grads(params: Params) -> None:
    for t in params.values():
        t.grad = None


def win_block_forward(
    x: Tensor,
    params: Params,
    prefix: str,
    cfg: BlockConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """One block: attention sublayer, optional depthwise-conv sublayer in
    the configured placement, MLP sublayer, each pre-normed with its own
    residual and stochastic depth.

    Default (late_residual, literal skip) wiring:
        y = x + DropPath(WSA(LN(x)))
        n = LN(y); y = n + DropPath(DConv(n))
        y = y + DropPath(MLP(LN(y)))
    early_residual takes the conv skip from y instead of n; no_residual
    drops skip and drop-path entirely; placement none omits the sublayer.
    With ``shifted`` the attention runs on a cyclically rolled map with a
    cross-region mask, rolled back afterwards.
    """
    p = lambda name: params[f"{prefix}.{name}"]
    rate = cfg.drop_path_rate

    normed = layer_norm(x, p("norm_attn.gamma"), p("norm_attn.beta"))
    shift = cfg.window // 2 if cfg.shifted else 0
    if shift:
        normed = cyclic_shift(normed, shift)
    wins, grid = window_partition(normed, cfg.window)
    mask = shift_attention_mask(grid, shift, dtype=x.dtype) if shift else None
    rpe = RelativePositionBias.for_window(p("attn.rpe_table"), cfg.window) if cfg.pe_mode == "rpe" else None
    lepe_kernel = p("attn.lepe_kernel") if cfg.pe_mode == "lepe" else None
    attn_out = window_attention(
        wins,
        w_qkv=p("attn.w_qkv"),
        b_qkv=p("attn.b_qkv"),
        w_out=p("attn.w_out"),
        b_out=p("attn.b_out"),
        cfg=cfg,
        rpe=rpe,
        lepe_kernel=lepe_kernel,
        mask=mask,
    )
    attn_map = window_reverse(attn_out, grid)
    if shift:
        attn_map = cyclic_shift(attn_map, -shift)
    y = add(x, drop_path(attn_map, rate, training, rng))

    if cfg.has_conv:
        normed = layer_norm(y, p("norm_conv.gamma"), p("norm_conv.beta"))
        conv = dwconv2d(normed, p("conv.kernel"), p("conv.bias") if cfg.conv_bias else None)
        if cfg.conv_placement == "late_residual":
            skip = normed if cfg.conv_skip == "literal" else y
            y = add(skip, drop_path(conv, rate, training, rng))
        elif cfg.conv_placement == "early_residual":
            y = add(y, drop_path(conv, rate, training, rng))
        else:  # no_residual: skipless, so no drop-path either
            y = conv

    normed = layer_norm(y, p("norm_mlp.gamma"), p("norm_mlp.beta"))
    y = add(y, drop_path(mlp(normed, p("mlp.w1"), p("mlp.b1"), p("mlp.w2"), p("mlp.b2")), rate, training, rng))

    if not np.isfinite(y.data).all():
        raise NumericsError(f"non-finite values in output of block {prefix}")
    return y


def stage_forward(
    x: Tensor,
    params: Params,
    cfg: ModelConfig,
    stage: int,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    for j in range(cfg.depths[stage]):
        x = win_block_forward(x, params, f"stage{stage}.block{j}", cfg.block_config(stage, j), training, rng)
    return x


def model_forward(
    image: Tensor,
    params: Params,
    cfg: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Full forward pass: patch embed, stages with merges between them,
    final layer norm, global average pool over tokens, linear head.
    Returns (B, num_classes) logits."""
    cfg.validate_geometry(image.shape[1])
    x = patch_embed(
        image,
        params["patch_embed.proj.w"],
        params["patch_embed.proj.b"],
        params["patch_embed.norm.gamma"],
        params["patch_embed.norm.beta"],
    )
    for i in range(cfg.num_stages):
        x = stage_forward(x, params, cfg, i, training, rng)
        if i + 1 < cfg.num_stages:
            x = patch_merge(
                x,
                params[f"merge{i}.norm.gamma"],
                params[f"merge{i}.norm.beta"],
                params[f"merge{i}.proj.w"],
            )
    x = layer_norm(x, params["head.norm.gamma"], params["head.norm.beta"])
    pooled = reduce_mean(x, axis=(1, 2))
    return linear(pooled, params["head.w"], params["head.b"])
