"""Architecture-specific operators: patch tokenization and merging, window
partitioning, window multi-head self-attention with three positional-encoding
modes, cyclic shift + attention masking for the shifted-window variant, the
MLP sublayer, and stochastic depth.

Feature maps are (B, H, W, C) tensors; windows are (B * nW, M*M, C) with
windows ordered row-major over the grid and tokens row-major within each
window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import BlockConfig, GeometryError
from .tensor import (
    ShapeError,
    Tensor,
    add,
    broadcast_to,
    dwconv2d,
    gather_rows,
    gelu,
    layer_norm,
    linear,
    matmul,
    mul,
    reshape,
    roll2d,
    scale,
    slice_axis,
    softmax,
    transpose,
)

MASK_NEG = -1e9  # masked attention logit; large negative instead of -inf to keep softmax backward finite


@dataclass(frozen=True)
class WindowGrid:
    """Window tiling of an H x W token map into an (windows_h, windows_w)
    grid of M x M windows; H = windows_h * M and W = windows_w * M."""

    windows_h: int
    windows_w: int
    window: int
    height: int
    width: int

    @property
    def num_windows(self) -> int:
        return self.windows_h * self.windows_w


def window_partition(x: Tensor, window: int) -> tuple[Tensor, WindowGrid]:
    """Split (B, H, W, C) into (B * nW, M*M, C) non-overlapping windows."""
    if x.ndim != 4:
        raise ShapeError(f"window_partition: expected rank-4 feature map, got {x.shape}")
    b, h, w, c = x.shape
    if h % window != 0 or w % window != 0:
        raise GeometryError(f"window_partition: map {h}x{w} does not divide into {window}x{window} windows")
    grid = WindowGrid(h // window, w // window, window, h, w)
    t = reshape(x, (b, grid.windows_h, window, grid.windows_w, window, c))
    t = transpose(t, (0, 1, 3, 2, 4, 5))
    return reshape(t, (b * grid.num_windows, window * window, c)), grid


def window_reverse(wins: Tensor, grid: WindowGrid) -> Tensor:
    """Exact inverse of :func:`window_partition`."""
    m = grid.window
    nw = grid.num_windows
    if wins.ndim != 3 or wins.shape[1] != m * m:
        raise ShapeError(f"window_reverse: windows {wins.shape} inconsistent with window size {m}")
    if wins.shape[0] % nw != 0:
        raise ShapeError(f"window_reverse: {wins.shape[0]} windows not a multiple of grid count {nw}")
    b = wins.shape[0] // nw
    c = wins.shape[2]
    t = reshape(wins, (b, grid.windows_h, grid.windows_w, m, m, c))
    t = transpose(t, (0, 1, 3, 2, 4, 5))
    return reshape(t, (b, grid.height, grid.width, c))


@lru_cache(maxsize=32)
def relative_position_index(window: int) -> np.ndarray:
    """(M*M, M*M) table-row index for each token pair, a function of the
    relative (row, col) offset only: (dr + M-1) * (2M-1) + (dc + M-1)."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij"), axis=-1)
    coords = coords.reshape(-1, 2)
    delta = coords[:, None, :] - coords[None, :, :]
    index = (delta[..., 0] + window - 1) * (2 * window - 1) + (delta[..., 1] + window - 1)
    index.setflags(write=False)
    return index


@dataclass(frozen=True)
class RelativePositionBias:
    """Learned per-head bias over relative in-window offsets: a
    ((2M-1)^2, heads) table plus the (M*M, M*M) pair-to-row index."""

    table: Tensor
    index: np.ndarray

    def __post_init__(self):
        rows = self.table.shape[0]
        if int(self.index.max()) >= rows or int(self.index.min()) < 0:
            raise ShapeError(f"relative position index range exceeds table rows {rows}")

    @classmethod
    def for_window(cls, table: Tensor, window: int) -> "RelativePositionBias":
        expected = (2 * window - 1) ** 2
        if table.shape[0] != expected:
            raise ShapeError(f"rpe table has {table.shape[0]} rows, expected {expected} for window {window}")
        return cls(table=table, index=relative_position_index(window))


def cyclic_shift(x: Tensor, shift: int) -> Tensor:
    """Roll a feature map by (-shift, -shift) spatially; a negative shift
    is the exact inverse."""
    return roll2d(x, -shift, -shift)


def shift_region_labels(height: int, width: int, window: int, shift: int) -> np.ndarray:
    """Label each token of an H x W map by its pre-shift region under the
    cyclic-shift partitioning; tokens with different labels must not attend
    to each other after the shift."""
    labels = np.zeros((height, width), dtype=np.int64)
    if shift == 0:
        return labels
    spans = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    region = 0
    for rows in spans:
        for cols in spans:
            labels[rows, cols] = region
            region += 1
    return labels


@lru_cache(maxsize=64)
def _shift_attention_mask_cached(grid: WindowGrid, shift: int, dtype_name: str) -> np.ndarray:
    m = grid.window
    labels = shift_region_labels(grid.height, grid.width, m, shift)
    shifted = np.roll(labels, (-shift, -shift), axis=(0, 1))
    wins = (
        shifted.reshape(grid.windows_h, m, grid.windows_w, m)
        .transpose(0, 2, 1, 3)
        .reshape(grid.num_windows, m * m)
    )
    different = wins[:, :, None] != wins[:, None, :]
    mask = np.where(different, MASK_NEG, 0.0).astype(dtype_name)
    mask.setflags(write=False)
    return mask


def shift_attention_mask(grid: WindowGrid, shift: int, dtype=np.float64) -> np.ndarray:
    """(nW, M*M, M*M) additive logit mask for shifted windows: 0 within a
    pre-shift region, MASK_NEG across regions. All zeros when shift = 0."""
    if not (0 <= shift < grid.window):
        raise ValueError(f"shift must satisfy 0 <= shift < window, got {shift} for window {grid.window}")
    return _shift_attention_mask_cached(grid, shift, np.dtype(dtype).name)


def _split_heads(t: Tensor, heads: int) -> Tensor:
    nwb, tokens, c = t.shape
    t = reshape(t, (nwb, tokens, heads, c // heads))
    return transpose(t, (0, 2, 1, 3))


def window_attention(
    wins: Tensor,
    *,
    w_qkv: Tensor,
    b_qkv: Tensor,
    w_out: Tensor,
    b_out: Tensor,
    cfg: BlockConfig,
    rpe: RelativePositionBias | None = None,
    lepe_kernel: Tensor | None = None,
    mask: np.ndarray | None = None,
    return_attn: bool = False,
):
    """Multi-head self-attention within each window.

    Q, K, V come from one fused projection; logits are scaled by
    1/sqrt(head_dim) (applied to Q), biased by the relative-position table
    when pe_mode is "rpe", and masked per window when ``mask`` is given.
    When pe_mode is "lepe", a 3x3 depthwise convolution of V (arranged as an
    M x M map per window) is added to the attention output before the final
    projection. pe_mode "none" adds no positional term.
    """
    nwb, tokens, c = wins.shape
    m = cfg.window
    if tokens != m * m:
        raise ShapeError(f"window_attention: {tokens} tokens per window, expected {m * m}")
    if c != cfg.channels:
        raise ShapeError(f"window_attention: {c} channels, config says {cfg.channels}")
    heads, dim = cfg.heads, cfg.head_dim

    qkv = linear(wins, w_qkv, b_qkv)
    q = slice_axis(qkv, 2, 0, c)
    k = slice_axis(qkv, 2, c, c)
    v = slice_axis(qkv, 2, 2 * c, c)

    qh = scale(_split_heads(q, heads), 1.0 / math.sqrt(dim))
    kh = _split_heads(k, heads)
    vh = _split_heads(v, heads)

    logits = matmul(qh, transpose(kh, (0, 1, 3, 2)))  # (nwb, heads, M*M, M*M)

    if cfg.pe_mode == "rpe":
        if rpe is None:
            raise ShapeError("window_attention: pe_mode is 'rpe' but no bias table was given")
        bias = gather_rows(rpe.table, rpe.index.reshape(-1))
        bias = reshape(bias, (tokens, tokens, heads))
        bias = transpose(bias, (2, 0, 1))
        bias = reshape(bias, (1, heads, tokens, tokens))
        logits = add(logits, broadcast_to(bias, logits.shape))

    if mask is not None:
        nw = mask.shape[0]
        if mask.shape != (nw, tokens, tokens) or nwb % nw != 0:
            raise ShapeError(f"window_attention: mask shape {mask.shape} inconsistent with windows {wins.shape}")
        b = nwb // nw
        mask_t = Tensor(mask.astype(wins.dtype, copy=False).reshape(1, nw, 1, tokens, tokens))
        logits = reshape(logits, (b, nw, heads, tokens, tokens))
        logits = add(logits, broadcast_to(mask_t, logits.shape))
        logits = reshape(logits, (nwb, heads, tokens, tokens))

    attn = softmax(logits, axis=-1)

    ctx = matmul(attn, vh)
    ctx = transpose(ctx, (0, 2, 1, 3))
    ctx = reshape(ctx, (nwb, tokens, c))

    if cfg.pe_mode == "lepe":
        if lepe_kernel is None:
            raise ShapeError("window_attention: pe_mode is 'lepe' but no depthwise kernel was given")
        vmap = reshape(v, (nwb, m, m, c))
        ctx = add(ctx, reshape(dwconv2d(vmap, lepe_kernel), (nwb, tokens, c)))

    out = linear(ctx, w_out, b_out)
    if return_attn:
        return out, attn
    return out


def mlp(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two fully-connected layers with a gelu between them."""
    return linear(gelu(linear(x, w1, b1)), w2, b2)


def drop_path(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Stochastic depth on a residual branch: during training, zero the
    whole branch per sample with probability ``rate`` and rescale survivors
    by 1/(1-rate); identity in evaluation mode."""
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"drop_path rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("drop_path in training mode needs an rng")
    b = x.shape[0]
    keep = (rng.random(b) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    mask = Tensor(keep.reshape((b,) + (1,) * (x.ndim - 1)))
    return mul(x, broadcast_to(mask, x.shape))


def patch_embed(image: Tensor, w_proj: Tensor, bias: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Tokenize (B, H, W, 3) into (B, H/4, W/4, C): each 4x4 patch is
    flattened row-major with channels fastest, linearly projected, then
    layer-normed."""
    if image.ndim != 4:
        raise ShapeError(f"patch_embed: expected rank-4 image, got {image.shape}")
    b, h, w, c_in = image.shape
    if h % 4 != 0 or w % 4 != 0:
        raise GeometryError(f"patch_embed: image {h}x{w} not divisible by the 4x4 patch size")
    t = reshape(image, (b, h // 4, 4, w // 4, 4, c_in))
    t = transpose(t, (0, 1, 3, 2, 4, 5))
    t = reshape(t, (b, h // 4, w // 4, 16 * c_in))
    return layer_norm(linear(t, w_proj, bias), gamma, beta)


def patch_merge(x: Tensor, gamma: Tensor, beta: Tensor, w_proj: Tensor) -> Tensor:
    """Downsample (B, H, W, D) to (B, H/2, W/2, 2D): concatenate each 2x2
    neighborhood (order (0,0),(0,1),(1,0),(1,1)) to 4D, layer-norm, project
    to 2D without bias."""
    if x.ndim != 4:
        raise ShapeError(f"patch_merge: expected rank-4 feature map, got {x.shape}")
    b, h, w, d = x.shape
    if h % 2 != 0 or w % 2 != 0:
        raise GeometryError(f"patch_merge: map {h}x{w} has odd extent")
    t = reshape(x, (b, h // 2, 2, w // 2, 2, d))
    t = transpose(t, (0, 1, 3, 2, 4, 5))
    t = reshape(t, (b, h // 2, w // 2, 4 * d))
    return matmul(layer_norm(t, gamma, beta), w_proj)
