"""Plain window-attention vision transformer with a depthwise-convolution
cross-window sublayer, on a minimal numpy reverse-mode autodiff core."""

from .config import (
    BlockConfig,
    ConfigError,
    GeometryError,
    ModelConfig,
    StageConfig,
    TrainConfig,
    load_model_config,
    load_train_config,
    preset,
    tiny,
    win_b,
    win_s,
    win_t,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .costing import CostEntry, CostReport, count_flops, count_params
from .data import SyntheticDataset, gen_synthetic
from .model import init_params, model_forward, stage_forward, win_block_forward
from .optim import AdamWState, adamw_step, init_adamw_state, lr_at
from .probe import cross_window_summary, jacobian_probe
from .tensor import ComputeGraph, NumericsError, ShapeError, Tensor, backward, grad_check
from .train import MetricsLog, MetricsRow, cross_entropy, train_toy
from .ablation import AblationRow, ablate

__version__ = "0.1.0"
