"""Desk-scale ablation runner over the four configuration axes: conv
placement, conv x shifted-window grid, conv kernel size, and
positional-encoding mode. Every variant trains on the same crosswindow
dataset with a shared seed and schedule; parameter and MAC columns come
from the analytic costing."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

from .config import ModelConfig, TrainConfig, tiny
from .costing import count_flops, count_params
from .data import SyntheticDataset, gen_synthetic
from .train import train_toy

AXES = ("placement", "conv_shift", "kernel", "pe")


@dataclass(frozen=True)
class AblationRow:
    variant: str
    params: int
    macs: int
    final_acc: float


def crosswindow_model_config() -> ModelConfig:
    """Desk-scale model for the learning ablations. Window 2 keeps 2x2
    windows at the coarsest stage too, so with conv and shifting both off
    no layer ever sees both markers of a crosswindow sample."""
    return tiny(window=2, name="tiny-m2")


def crosswindow_footprint(cfg: ModelConfig) -> int:
    """Image-pixel extent of one window at the coarsest stage; markers in
    different cells of this grid are cross-window at every stage."""
    return 4 * cfg.window * 2 ** (cfg.num_stages - 1)


def default_dataset(cfg: ModelConfig, n: int = 64, seed: int = 7) -> SyntheticDataset:
    return gen_synthetic("crosswindow", n, cfg.input_size, cfg.input_size, crosswindow_footprint(cfg), seed)


def _variants(axis: str, base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    if axis == "placement":
        return [(p, replace(base, conv_placement=p)) for p in ("late_residual", "early_residual", "no_residual")]
    if axis == "conv_shift":
        cells = []
        for conv in (False, True):
            for shift in (False, True):
                name = f"conv_{'on' if conv else 'off'}_shift_{'on' if shift else 'off'}"
                cfg = replace(base, conv_placement="late_residual" if conv else "none", shifted=shift)
                cells.append((name, cfg))
        return cells
    if axis == "kernel":
        return [(f"k{k}", replace(base, conv_kernel=k)) for k in (3, 5, 7)]
    if axis == "pe":
        return [(pe, replace(base, pe_mode=pe)) for pe in ("rpe", "lepe", "none")]
    raise ValueError(f"unknown ablation axis {axis!r}; expected one of {AXES}")


def ablate(
    axis: str,
    base_cfg: ModelConfig | None = None,
    train_cfg: TrainConfig | None = None,
    dataset: SyntheticDataset | None = None,
    out_path=None,
) -> list[AblationRow]:
    """Train every variant along ``axis`` and report accuracy plus analytic
    param/MAC totals. Writes a CSV when ``out_path`` is given."""
    base = crosswindow_model_config() if base_cfg is None else base_cfg
    tcfg = TrainConfig() if train_cfg is None else train_cfg
    data = default_dataset(base, seed=tcfg.seed + 1000) if dataset is None else dataset

    rows = []
    for name, cfg in _variants(axis, base):
        log = train_toy(cfg, tcfg, data)
        rows.append(
            AblationRow(
                variant=name,
                params=count_params(cfg).total_params,
                macs=count_flops(cfg).total_macs,
                final_acc=log.final_train_acc,
            )
        )
    if out_path is not None:
        write_ablation_csv(rows, out_path)
    return rows


def write_ablation_csv(rows: list[AblationRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "params", "macs", "final_acc"])
        for r in rows:
            writer.writerow([r.variant, r.params, r.macs, f"{r.final_acc:.4f}"])
