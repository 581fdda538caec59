"""Analytic per-layer parameter and multiply-accumulate accounting.

No tensors are allocated; everything is closed-form from the config. The
MAC convention counts one multiply-accumulate as one FLOP and excludes
normalization, softmax, activations, and bias additions — the convention
that reproduces the published 4.5G-scale totals for the reference sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import BlockConfig, ModelConfig


@dataclass(frozen=True)
class CostEntry:
    name: str
    params: int
    macs: int


@dataclass
class CostReport:
    entries: list[CostEntry] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(e.params for e in self.entries)

    @property
    def total_macs(self) -> int:
        return sum(e.macs for e in self.entries)

    def find(self, name: str) -> CostEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def matching(self, suffix: str) -> list[CostEntry]:
        return [e for e in self.entries if e.name.endswith(suffix)]

    def table(self) -> str:
        width = max(len(e.name) for e in self.entries) if self.entries else 10
        lines = [f"{'layer':<{width}}  {'params':>14}  {'macs':>16}"]
        for e in self.entries:
            lines.append(f"{e.name:<{width}}  {e.params:>14,}  {e.macs:>16,}")
        lines.append(f"{'total':<{width}}  {self.total_params:>14,}  {self.total_macs:>16,}")
        return "\n".join(lines)


def _block_costs(cfg: BlockConfig, tokens: int | None) -> list[tuple[str, int, int]]:
    """(suffix, params, macs) for one block; tokens = H*W of the stage map,
    or None for a params-only report."""
    c, h, m = cfg.channels, cfg.heads, cfg.window
    hidden = cfg.mlp_hidden
    n = 0 if tokens is None else tokens

    attn_params = c * 3 * c + 3 * c + c * c + c
    attn_macs = n * c * 3 * c + 2 * n * m * m * c + n * c * c  # qkv, logits + weighted sum, out proj
    if cfg.pe_mode == "rpe":
        attn_params += (2 * m - 1) ** 2 * h
    elif cfg.pe_mode == "lepe":
        attn_params += 9 * c
        attn_macs += n * 9 * c

    norm_params = 2 * c * (3 if cfg.has_conv else 2)

    rows = [
        ("attn", attn_params, attn_macs),
        ("norm", norm_params, 0),
    ]
    if cfg.has_conv:
        conv_params = cfg.conv_kernel**2 * c + (c if cfg.conv_bias else 0)
        rows.insert(1, ("conv", conv_params, n * cfg.conv_kernel**2 * c))
    rows.append(("mlp", c * hidden + hidden + hidden * c + c, 2 * n * c * hidden))
    return rows


def _report(cfg: ModelConfig, input_size: int | None) -> CostReport:
    resolutions = cfg.validate_geometry(input_size) if input_size is not None else None
    report = CostReport()
    c0 = cfg.base_channels
    embed_tokens = 0 if input_size is None else (input_size // 4) ** 2
    report.entries.append(CostEntry("patch_embed", 48 * c0 + c0 + 2 * c0, embed_tokens * 48 * c0))
    for i in range(cfg.num_stages):
        tokens = None if resolutions is None else resolutions[i] ** 2
        for j in range(cfg.depths[i]):
            block = cfg.block_config(i, j)
            for suffix, params, macs in _block_costs(block, tokens):
                report.entries.append(CostEntry(f"stage{i}.block{j}.{suffix}", params, macs))
        if i + 1 < cfg.num_stages:
            d = cfg.stage_channels(i)
            merge_tokens = 0 if resolutions is None else (resolutions[i] // 2) ** 2
            report.entries.append(CostEntry(f"merge{i}", 2 * 4 * d + 4 * d * 2 * d, merge_tokens * 4 * d * 2 * d))
    c_last = cfg.stage_channels(cfg.num_stages - 1)
    head_macs = 0 if input_size is None else c_last * cfg.num_classes
    report.entries.append(
        CostEntry("head", 2 * c_last + c_last * cfg.num_classes + cfg.num_classes, head_macs)
    )
    return report


def count_params(cfg: ModelConfig) -> CostReport:
    """Itemized parameter counts; the macs column is zero."""
    return _report(cfg, None)


def count_flops(cfg: ModelConfig, input_size: int | None = None) -> CostReport:
    """Itemized parameter and MAC counts for one sample at ``input_size``
    (defaults to the config's input size)."""
    return _report(cfg, cfg.input_size if input_size is None else input_size)
