"""Desk-scale training loop: cross-entropy on synthetic tasks, AdamW with
warmup + cosine decay, deterministic in the seed."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import ModelConfig, TrainConfig
from .data import SyntheticDataset
from .model import Params, init_params, model_forward, zero_grads
from .optim import adamw_step, init_adamw_state, lr_at
from .tensor import NumericsError, Tensor, broadcast_to, exp, log, mul, reduce_mean, reduce_sum, reshape, sub

METRICS_HEADER = ("step", "lr", "train_loss", "train_acc", "eval_acc", "wall_ms")


class TrainingDivergedError(ArithmeticError):
    pass


@dataclass(frozen=True)
class MetricsRow:
    step: int
    lr: float
    train_loss: float
    train_acc: float
    eval_acc: float
    wall_ms: float


@dataclass
class MetricsLog:
    rows: list[MetricsRow] = field(default_factory=list)

    @property
    def final_train_acc(self) -> float:
        return self.rows[-1].train_acc

    @property
    def best_train_acc(self) -> float:
        return max(r.train_acc for r in self.rows)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(METRICS_HEADER)
            for r in self.rows:
                writer.writerow(
                    [r.step, f"{r.lr:.10g}", f"{r.train_loss:.6f}", f"{r.train_acc:.4f}", f"{r.eval_acc:.4f}", f"{r.wall_ms:.1f}"]
                )


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of (B, K) logits against integer labels,
    computed via a constant-shift log-sum-exp."""
    b, k = logits.shape
    shift = Tensor(logits.data.max(axis=1, keepdims=True))  # constant; exact for lse
    z = sub(logits, broadcast_to(shift, logits.shape))
    lse = reshape(log(reduce_sum(exp(z), axis=1, keepdims=True)), (b,))
    onehot = np.zeros((b, k), dtype=logits.data.dtype)
    onehot[np.arange(b), labels] = 1.0
    picked = reduce_sum(mul(z, Tensor(onehot)), axis=1)
    return reduce_mean(sub(lse, picked))


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((logits.argmax(axis=1) == labels).mean())


def _forward_in_batches(params: Params, cfg: ModelConfig, dataset: SyntheticDataset, batch_size: int, dtype) -> np.ndarray:
    outs = []
    for start in range(0, len(dataset), batch_size):
        x = Tensor(dataset.images[start : start + batch_size].astype(dtype))
        outs.append(model_forward(x, params, cfg, training=False).data)
    return np.concatenate(outs, axis=0)


def evaluate(params: Params, cfg: ModelConfig, dataset: SyntheticDataset, batch_size: int = 32, dtype=np.float32):
    """(mean loss, accuracy) over a dataset in evaluation mode."""
    logits = _forward_in_batches(params, cfg, dataset, batch_size, dtype)
    loss = cross_entropy(Tensor(logits), dataset.labels).item()
    return loss, accuracy(logits, dataset.labels)


def train_toy(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: SyntheticDataset,
    eval_dataset: SyntheticDataset | None = None,
    out_dir=None,
    log_every: int = 50,
) -> MetricsLog:
    """Train on a synthetic dataset; returns the metrics log and, when
    ``out_dir`` is given, writes metrics.csv plus a final checkpoint.

    Logged train_loss/train_acc are over the full training set in
    evaluation mode; eval_acc is over ``eval_dataset`` (the training set if
    none is given). Deterministic given the configs and seed; aborts with a
    diagnostic naming the step if the loss goes non-finite.
    """
    if model_cfg.num_classes < int(dataset.labels.max()) + 1:
        raise ValueError(f"model has {model_cfg.num_classes} classes but labels reach {int(dataset.labels.max())}")
    if train_cfg.drop_path_max is not None:
        model_cfg = replace(model_cfg, drop_path_max=train_cfg.drop_path_max)
    dtype = np.dtype(train_cfg.dtype)
    eval_set = dataset if eval_dataset is None else eval_dataset

    rng = np.random.default_rng(train_cfg.seed)
    params = init_params(model_cfg, train_cfg.seed, dtype=dtype)
    state = init_adamw_state(params)
    log = MetricsLog()
    start_time = time.perf_counter()

    def record(step: int) -> None:
        train_loss, train_acc = evaluate(params, model_cfg, dataset, dtype=dtype)
        _, eval_acc = evaluate(params, model_cfg, eval_set, dtype=dtype)
        wall_ms = (time.perf_counter() - start_time) * 1000.0
        log.rows.append(MetricsRow(step, lr_at(step, train_cfg), train_loss, train_acc, eval_acc, wall_ms))

    record(0)
    n = len(dataset)
    order = rng.permutation(n)
    cursor = 0
    for step in range(1, train_cfg.steps + 1):
        if cursor + train_cfg.batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor : cursor + train_cfg.batch_size]
        cursor += train_cfg.batch_size

        x = Tensor(dataset.images[idx].astype(dtype))
        try:
            logits = model_forward(x, params, model_cfg, training=True, rng=rng)
        except NumericsError as e:
            raise TrainingDivergedError(f"diverged at step {step}: {e}") from e
        loss = cross_entropy(logits, dataset.labels[idx])
        if not np.isfinite(loss.data).all():
            raise TrainingDivergedError(f"loss became non-finite at step {step}")
        zero_grads(params)
        loss.backward()
        grads = {name: t.grad for name, t in params.items() if t.grad is not None}
        adamw_step(params, grads, state, lr=lr_at(step, train_cfg), weight_decay=train_cfg.weight_decay)

        if step % log_every == 0 or step == train_cfg.steps:
            record(step)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        log.to_csv(out / "metrics.csv")
        save_checkpoint(params, out / "checkpoint.ckpt")
    return log
