"""Synthetic desk-scale datasets.

The crosswindow task plants two channel-coded markers in *different* image
windows and labels the sample by the relative placement of their windows
(0 = horizontally adjacent, 1 = vertically adjacent). Marker placement
within a window is fixed and the background is zero, so every window's
content is one of a handful of shared patterns: a model whose layers never
communicate across windows produces identical pooled features for both
classes and cannot beat chance even on the training set. Any cross-window
path (depthwise conv, shifted windows) makes the orientation visible.

The local task places one marker at a random slot and labels its vertical
half within its own window; it is learnable without any cross-window
communication.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import GeometryError

TASKS = ("crosswindow", "local")
NUM_CLASSES = 2
MARKER_SIZE = 4  # one 4x4 patch, i.e. exactly one token after embedding
MARKER_VALUE = 3.0
NOISE_STD = 0.1  # local task only; crosswindow keeps a zero background


@dataclass(frozen=True)
class SyntheticDataset:
    images: np.ndarray  # (N, H, W, 3) float32
    labels: np.ndarray  # (N,) int64
    task: str
    window: int  # image-space window extent the labels are defined over

    def __len__(self) -> int:
        return len(self.labels)


def _balanced_labels(n: int, rng: np.random.Generator) -> np.ndarray:
    labels = np.arange(n) % NUM_CLASSES
    rng.shuffle(labels)
    return labels.astype(np.int64)


def _stamp(images: np.ndarray, i: int, top: int, left: int, channel: int) -> None:
    images[i, top : top + MARKER_SIZE, left : left + MARKER_SIZE, channel] += MARKER_VALUE


def gen_synthetic(task: str, n: int, height: int, width: int, window: int, seed: int) -> SyntheticDataset:
    """Deterministic, class-balanced dataset of ``n`` samples.

    ``window`` is the image-space window extent; for the crosswindow task
    the two markers never share a window, and a label-0/1 sample puts them
    in horizontally/vertically adjacent windows.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    if height % window != 0 or width % window != 0:
        raise GeometryError(f"image {height}x{width} does not divide into {window}x{window} windows")
    if height < 2 * window or width < 2 * window:
        raise GeometryError(f"image {height}x{width} needs at least a 2x2 grid of {window}x{window} windows")
    if window % MARKER_SIZE != 0:
        raise GeometryError(f"window {window} does not align with the {MARKER_SIZE}x{MARKER_SIZE} marker")

    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n, rng)
    cells_h, cells_w = height // window, width // window

    if task == "crosswindow":
        images = np.zeros((n, height, width, 3), dtype=np.float32)
        for i in range(n):
            if labels[i] == 0:  # horizontally adjacent windows
                row = int(rng.integers(cells_h))
                col = int(rng.integers(cells_w - 1))
                cell_a, cell_b = (row, col), (row, col + 1)
            else:  # vertically adjacent windows
                row = int(rng.integers(cells_h - 1))
                col = int(rng.integers(cells_w))
                cell_a, cell_b = (row, col), (row + 1, col)
            if rng.random() < 0.5:
                cell_a, cell_b = cell_b, cell_a
            for (cy, cx), channel in ((cell_a, 0), (cell_b, 1)):
                _stamp(images, i, cy * window, cx * window, channel)  # fixed top-left slot
    else:  # local: marker's vertical half within its window decides the label
        images = rng.normal(0.0, NOISE_STD, size=(n, height, width, 3)).astype(np.float32)
        slots = window // MARKER_SIZE
        for i in range(n):
            cell = (int(rng.integers(cells_h)), int(rng.integers(cells_w)))
            dy = int(rng.integers(slots // 2)) * MARKER_SIZE + (0 if labels[i] == 0 else window // 2)
            dx = int(rng.integers(slots)) * MARKER_SIZE
            _stamp(images, i, cell[0] * window + dy, cell[1] * window + dx, 0)

    return SyntheticDataset(images=images, labels=labels, task=task, window=window)


def marker_windows(dataset: SyntheticDataset, i: int) -> dict[int, set[tuple[int, int]]]:
    """Per-channel window-grid cells containing marker energy in sample
    ``i`` (test hook for the never-share-a-window invariant)."""
    img = dataset.images[i]
    w = dataset.window
    cells: dict[int, set[tuple[int, int]]] = {}
    for channel in (0, 1):
        strong = np.argwhere(img[:, :, channel] > MARKER_VALUE / 2)
        cells[channel] = {(int(y) // w, int(x) // w) for y, x in strong}
    return cells
