"""Architecture and training hyperparameter dataclasses plus the
compiled-in model presets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    """A configuration value or document is invalid."""


class GeometryError(ValueError):
    """Input/window/stage extents do not divide as required."""


CONV_PLACEMENTS = ("late_residual", "early_residual", "no_residual", "none")
CONV_SKIPS = ("literal", "prenorm")
PE_MODES = ("rpe", "lepe", "none")


@dataclass(frozen=True)
class BlockConfig:
    """Per-block hyperparameters: channel width, attention heads, window
    size, MLP expansion, conv sublayer wiring, positional-encoding mode,
    window-shift flag, and stochastic-depth rate."""

    channels: int
    heads: int
    window: int = 7
    mlp_ratio: float = 4.0
    conv_kernel: int = 7
    conv_placement: str = "late_residual"
    conv_skip: str = "literal"
    pe_mode: str = "lepe"
    shifted: bool = False
    drop_path_rate: float = 0.0
    conv_bias: bool = True

    def __post_init__(self):
        if self.channels <= 0 or self.heads <= 0:
            raise ConfigError(f"channels/heads must be positive, got {self.channels}/{self.heads}")
        if self.channels % self.heads != 0:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigError(f"conv_kernel must be odd and positive, got {self.conv_kernel}")
        if self.conv_placement not in CONV_PLACEMENTS:
            raise ConfigError(f"conv_placement {self.conv_placement!r} not in {CONV_PLACEMENTS}")
        if self.conv_skip not in CONV_SKIPS:
            raise ConfigError(f"conv_skip {self.conv_skip!r} not in {CONV_SKIPS}")
        if self.pe_mode not in PE_MODES:
            raise ConfigError(f"pe_mode {self.pe_mode!r} not in {PE_MODES}")
        if not (0.0 <= self.drop_path_rate < 1.0):
            raise ConfigError(f"drop_path_rate must be in [0, 1), got {self.drop_path_rate}")
        if (self.channels * self.mlp_ratio) % 1 != 0:
            raise ConfigError(f"mlp_ratio {self.mlp_ratio} * channels {self.channels} is not an integer")

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @property
    def mlp_hidden(self) -> int:
        return int(self.channels * self.mlp_ratio)

    @property
    def has_conv(self) -> bool:
        return self.conv_placement != "none"


@dataclass(frozen=True)
class StageConfig:
    depth: int
    block: BlockConfig

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"stage depth must be >= 1, got {self.depth}")


@dataclass(frozen=True)
class ModelConfig:
    """Whole-model hyperparameters. Stage i runs at channels
    base_channels * 2**i; per-block stochastic-depth rates ramp linearly
    from 0 to drop_path_max over all blocks."""

    name: str = "win-t"
    input_size: int = 224
    base_channels: int = 96
    depths: tuple[int, ...] = (2, 2, 6, 2)
    heads: tuple[int, ...] = (3, 6, 12, 24)
    window: int = 7
    mlp_ratio: float = 4.0
    conv_kernel: int = 7
    conv_placement: str = "late_residual"
    conv_skip: str = "literal"
    pe_mode: str = "lepe"
    shifted: bool = False
    drop_path_max: float = 0.0
    num_classes: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(self.depths))
        object.__setattr__(self, "heads", tuple(self.heads))
        if len(self.depths) != len(self.heads):
            raise ConfigError(f"depths {self.depths} and heads {self.heads} differ in length")
        if not self.depths:
            raise ConfigError("at least one stage is required")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if not (0.0 <= self.drop_path_max < 1.0):
            raise ConfigError(f"drop_path_max must be in [0, 1), got {self.drop_path_max}")
        for i in range(self.num_stages):
            self.stage_config(i)  # validates channel/head/window combos

    @property
    def num_stages(self) -> int:
        return len(self.depths)

    @property
    def total_blocks(self) -> int:
        return sum(self.depths)

    def stage_channels(self, stage: int) -> int:
        return self.base_channels * (2**stage)

    def drop_path_rate(self, global_block: int) -> float:
        if self.total_blocks <= 1:
            return 0.0
        return self.drop_path_max * global_block / (self.total_blocks - 1)

    def stage_config(self, stage: int) -> StageConfig:
        return StageConfig(
            depth=self.depths[stage],
            block=BlockConfig(
                channels=self.stage_channels(stage),
                heads=self.heads[stage],
                window=self.window,
                mlp_ratio=self.mlp_ratio,
                conv_kernel=self.conv_kernel,
                conv_placement=self.conv_placement,
                conv_skip=self.conv_skip,
                pe_mode=self.pe_mode,
                shifted=self.shifted,
            ),
        )

    def block_config(self, stage: int, index: int) -> BlockConfig:
        """Effective config of one block: linear stochastic-depth ramp and
        the alternating shift schedule (even blocks plain, odd shifted)."""
        base = self.stage_config(stage).block
        global_block = sum(self.depths[:stage]) + index
        return replace(
            base,
            drop_path_rate=self.drop_path_rate(global_block),
            shifted=self.shifted and index % 2 == 1,
        )

    def stage_resolution(self, stage: int, input_size: int | None = None) -> int:
        size = self.input_size if input_size is None else input_size
        return size // 4 // (2**stage)

    def validate_geometry(self, input_size: int | None = None) -> list[int]:
        """Check the input divides into patches and every stage's token map
        divides into windows; returns per-stage token resolutions."""
        size = self.input_size if input_size is None else input_size
        if size <= 0 or size % 4 != 0:
            raise GeometryError(f"input size {size} is not a positive multiple of the 4x4 patch size")
        resolutions = []
        tokens = size // 4
        for i in range(self.num_stages):
            if tokens % self.window != 0:
                raise GeometryError(
                    f"stage {i + 1}: token map {tokens}x{tokens} does not divide into {self.window}x{self.window} windows"
                )
            resolutions.append(tokens)
            if i + 1 < self.num_stages:
                if tokens % 2 != 0:
                    raise GeometryError(f"stage {i + 1}: token map {tokens}x{tokens} cannot be 2x2-merged")
                tokens //= 2
        return resolutions

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_size": self.input_size,
            "base_channels": self.base_channels,
            "depths": list(self.depths),
            "heads": list(self.heads),
            "window": self.window,
            "mlp_ratio": self.mlp_ratio,
            "conv_kernel": self.conv_kernel,
            "conv_placement": self.conv_placement,
            "conv_skip": self.conv_skip,
            "pe_mode": self.pe_mode,
            "shifted": self.shifted,
            "drop_path_max": self.drop_path_max,
            "num_classes": self.num_classes,
        }


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale training hyperparameters: AdamW with linear warmup then
    cosine decay to zero."""

    steps: int = 500
    batch_size: int = 16
    lr_peak: float = 3e-3
    warmup_steps: int = 50
    weight_decay: float = 0.05
    seed: int = 0
    drop_path_max: float | None = None
    dtype: str = "float32"

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.warmup_steps < 0 or self.warmup_steps > self.steps:
            raise ConfigError(f"warmup_steps {self.warmup_steps} must lie in [0, steps={self.steps}]")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_peak <= 0:
            raise ConfigError(f"lr_peak must be positive, got {self.lr_peak}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "batch_size": self.batch_size,
            "lr_peak": self.lr_peak,
            "warmup_steps": self.warmup_steps,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "drop_path_max": self.drop_path_max,
            "dtype": self.dtype,
        }


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def win_t(**overrides) -> ModelConfig:
    return replace(ModelConfig(name="win-t", drop_path_max=0.1), **overrides) if overrides else ModelConfig(
        name="win-t", drop_path_max=0.1
    )


def win_s(**overrides) -> ModelConfig:
    cfg = ModelConfig(name="win-s", depths=(2, 2, 18, 2), drop_path_max=0.3)
    return replace(cfg, **overrides) if overrides else cfg


def win_b(**overrides) -> ModelConfig:
    cfg = ModelConfig(
        name="win-b", base_channels=128, depths=(2, 2, 18, 2), heads=(4, 8, 16, 32), drop_path_max=0.5
    )
    return replace(cfg, **overrides) if overrides else cfg


def tiny(**overrides) -> ModelConfig:
    """Desk-scale two-stage model, small enough for float64 finite-difference
    checks and minute-scale training."""
    cfg = ModelConfig(
        name="tiny",
        input_size=32,
        base_channels=16,
        depths=(2, 2),
        heads=(2, 4),
        window=4,
        num_classes=2,
        drop_path_max=0.0,
    )
    return replace(cfg, **overrides) if overrides else cfg


PRESETS = {
    "win-t": win_t,
    "win-s": win_s,
    "win-b": win_b,
    "tiny": tiny,
}


def preset(name: str) -> ModelConfig:
    key = name.strip().lower().replace("_", "-")
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known presets: {sorted(PRESETS)}")
    return PRESETS[key]()


_MODEL_JSON_KEYS = {f.name for f in fields(ModelConfig)}
_TRAIN_JSON_KEYS = {f.name for f in fields(TrainConfig)}


def _load_doc(source) -> dict:
    if isinstance(source, dict):
        doc = source
    else:
        doc = json.loads(Path(source).read_text())
    if not isinstance(doc, dict):
        raise ConfigError(f"config document must be a JSON object, got {type(doc).__name__}")
    return doc


def load_model_config(source) -> ModelConfig:
    """Build a ModelConfig from a JSON file path or dict. If ``name`` names
    a preset, that preset supplies the defaults; remaining keys override
    individual fields. Unknown keys are rejected."""
    doc = _load_doc(source)
    unknown = set(doc) - _MODEL_JSON_KEYS
    if unknown:
        raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
    name = doc.get("name", "")
    base = preset(name) if name.strip().lower().replace("_", "-") in PRESETS else ModelConfig()
    overrides = dict(doc)
    for key in ("depths", "heads"):
        if key in overrides:
            overrides[key] = tuple(overrides[key])
    try:
        return replace(base, **overrides)
    except TypeError as e:  # pragma: no cover - replace() misuse
        raise ConfigError(str(e)) from e


def load_train_config(source) -> TrainConfig:
    doc = _load_doc(source)
    unknown = set(doc) - _TRAIN_JSON_KEYS
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    return TrainConfig(**doc)
