"""Latent concept descriptors from last-pooling-layer activation tensors.

An (a, a, M) tensor holds M filter responses at each of a*a spatial
locations. Flattening by location gives a^2 M-dimensional descriptors per
frame. Optionally, a pyramid of channelwise max-pooling windows (side lengths
``levels``, window ceil(a/n), stride floor(a/n)) replaces the raw grid,
yielding sum(n^2) descriptors per frame; the default levels (6, 3, 2, 1) on a
7x7 grid give 50.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError, EmptyInputError, ParameterError, ShapeError

DEFAULT_LEVELS = (6, 3, 2, 1)


@dataclass(frozen=True)
class SppConfig:
    """Pyramid of max-pooling output sizes applied to one activation grid."""

    levels: tuple = DEFAULT_LEVELS

    def __post_init__(self):
        if not self.levels:
            raise ParameterError("SPP needs at least one level")
        if any(int(n) < 1 for n in self.levels):
            raise ParameterError(f"SPP levels must be >= 1, got {self.levels!r}")
        object.__setattr__(self, "levels", tuple(int(n) for n in self.levels))

    def rows_per_frame(self) -> int:
        return sum(n * n for n in self.levels)

    def windows(self, a: int) -> list[tuple[int, int, int]]:
        """(row0, col0, win) for every window, level-major then row-major.

        Raises if any level exceeds the grid; the ceil/floor rule itself
        always keeps windows inside the grid, which is asserted here anyway.
        """
        out = []
        for n in self.levels:
            if n > a:
                raise ParameterError(f"SPP level {n} exceeds grid side {a}")
            win = math.ceil(a / n)
            stride = a // n
            last = stride * (n - 1) + win
            if last > a:
                raise ParameterError(
                    f"SPP window overruns grid: level {n} on side {a}"
                )
            for r in range(n):
                for c in range(n):
                    out.append((r * stride, c * stride, win))
        return out


def _check_tensor(tensor: np.ndarray) -> np.ndarray:
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim != 3 or tensor.shape[0] != tensor.shape[1]:
        raise ShapeError(f"expected an (a, a, M) tensor, got shape {tensor.shape}")
    if not np.isfinite(tensor).all():
        raise DataError("non-finite value in activation tensor")
    return tensor


def extract_lcd(tensor: np.ndarray) -> np.ndarray:
    """One frame's a^2 location descriptors, row-major over (row, col)."""
    tensor = _check_tensor(tensor)
    a, _, m = tensor.shape
    return tensor.reshape(a * a, m)


def spp_lcd(tensor: np.ndarray, cfg: SppConfig) -> np.ndarray:
    """One frame's pyramid-pooled descriptors: channelwise max per window."""
    tensor = _check_tensor(tensor)
    a, _, m = tensor.shape
    windows = cfg.windows(a)
    rows = np.empty((len(windows), m))
    for i, (r0, c0, win) in enumerate(windows):
        rows[i] = tensor[r0 : r0 + win, c0 : c0 + win].reshape(-1, m).max(axis=0)
    return rows


def lcd_video(tensors: np.ndarray, cfg: SppConfig | None = None) -> np.ndarray:
    """Concatenate per-frame descriptors over a whole (n, a, a, M) tensor file."""
    tensors = np.asarray(tensors, dtype=np.float64)
    if tensors.ndim != 4:
        raise ShapeError(f"expected (n_frames, a, a, M), got shape {tensors.shape}")
    if tensors.shape[0] == 0:
        raise EmptyInputError("tensor file has no frames")
    if cfg is None:
        frames = [extract_lcd(t) for t in tensors]
    else:
        frames = [spp_lcd(t, cfg) for t in tensors]
    return np.concatenate(frames, axis=0)
