"""Jacobian sparsity probes.

The central structural claim under test: with the conv sublayer off and
shifting off, a stage's output token has exactly zero gradient with respect
to input tokens in other windows — window attention alone cannot move
information across window boundaries. Turning the depthwise conv on makes
boundary-adjacent cross-window entries nonzero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .model import init_params, stage_forward
from .tensor import Tensor, backward


def _stage_input(cfg: ModelConfig, stage: int, seed: int, dtype) -> Tensor:
    resolutions = cfg.validate_geometry()
    res = resolutions[stage]
    channels = cfg.stage_channels(stage)
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(0.0, 1.0, size=(1, res, res, channels)).astype(dtype), requires_grad=True)


def jacobian_probe(
    cfg: ModelConfig,
    stage: int,
    source: tuple[int, int],
    target: tuple[int, int],
    *,
    seed: int = 0,
    dtype=np.float64,
) -> float:
    """Max |d stage_output[target] / d stage_input[source]| over channels.

    Seeds a one-hot cotangent on the target token of the stage output and
    reads back the source token's input gradient. Evaluation mode, random
    weights and input fixed by ``seed``.
    """
    resolutions = cfg.validate_geometry()
    res = resolutions[stage]
    for name, (row, col) in (("source", source), ("target", target)):
        if not (0 <= row < res and 0 <= col < res):
            raise ValueError(f"{name} token {(row, col)} outside the {res}x{res} stage-{stage + 1} map")
    params = init_params(cfg, seed, dtype=dtype)
    x = _stage_input(cfg, stage, seed + 1, dtype)
    y = stage_forward(x, params, cfg, stage, training=False)
    seed_cot = np.zeros_like(y.data)
    seed_cot[0, target[0], target[1], :] = 1.0
    backward(y, seed_cot)
    grad = x.grad[0, source[0], source[1], :]
    return float(np.abs(grad).max())


@dataclass(frozen=True)
class ProbeSummary:
    """Cross-window gradient magnitudes for one stage of one config."""

    self_grad: float
    same_window: float
    adjacent_cross_window: float
    far_cross_window: float
    expect_isolated: bool

    @property
    def matches_prediction(self) -> bool:
        if self.expect_isolated:
            return self.adjacent_cross_window == 0.0 and self.far_cross_window == 0.0
        return self.adjacent_cross_window > 1e-8

    def lines(self) -> list[str]:
        return [
            f"self:                  {self.self_grad:.3e}",
            f"same window:           {self.same_window:.3e}",
            f"adjacent cross-window: {self.adjacent_cross_window:.3e}",
            f"far cross-window:      {self.far_cross_window:.3e}",
            f"expected isolation:    {self.expect_isolated}",
            f"matches prediction:    {self.matches_prediction}",
        ]


def cross_window_summary(cfg: ModelConfig, stage: int = 0, seed: int = 0) -> ProbeSummary:
    """Probe four canonical token pairs in one stage: a token against
    itself, a same-window neighbor, the nearest token across a window
    boundary, and a distant token in another window."""
    res = cfg.validate_geometry()[stage]
    m = cfg.window
    if res < 2 * m:
        raise ValueError(f"stage {stage + 1} map {res}x{res} has a single {m}x{m} window; nothing to probe")
    anchor = (0, m - 1)  # last column of the first window
    pairs = {
        "self": anchor,
        "same": (0, m - 2) if m > 1 else anchor,
        "adjacent": (0, m),  # first column of the next window
        "far": (res - 1, res - 1),
    }
    grads = {key: jacobian_probe(cfg, stage, src, anchor, seed=seed) for key, src in pairs.items()}
    isolated = cfg.conv_placement == "none" and not cfg.shifted
    return ProbeSummary(
        self_grad=grads["self"],
        same_window=grads["same"],
        adjacent_cross_window=grads["adjacent"],
        far_cross_window=grads["far"],
        expect_isolated=isolated,
    )
