"""Dense map containers, window enumeration and nearest-rank quantiles."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

IGNORE = -1
"""In-memory sentinel for unlabeled pixels in a label mask."""

NORMALIZATION_TOL = 1e-5


class NeighborOffset(NamedTuple):
    drow: int
    dcol: int
    rank: int


@dataclass(frozen=True)
class ProbMap:
    """Per-pixel class probabilities of shape ``(H, W, C)``.

    ``normalized`` marks maps whose class vectors sum to one (softmax output).
    Refined maps hold event-union values and carry ``normalized=False``.
    """

    values: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3:
            raise ValueError(f"ProbMap expects (H, W, C) values, got shape {values.shape}")
        if values.dtype != np.float32 and values.dtype != np.float64:
            values = values.astype(np.float32)
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("ProbMap values must lie in [0, 1]")
        if self.normalized and values.size:
            sums = values.sum(axis=-1, dtype=np.float64)
            if np.abs(sums - 1.0).max() > NORMALIZATION_TOL:
                raise ValueError("ProbMap flagged normalized but class sums deviate from 1")
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def classes(self) -> int:
        return self.values.shape[2]


def check_window(window: int) -> int:
    if isinstance(window, bool) or int(window) != window:
        raise ValueError(f"window size must be an integer, got {window!r}")
    window = int(window)
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window size must be odd and >= 3, got {window}")
    return window


def neighbor_offsets(window: int) -> tuple[NeighborOffset, ...]:
    """Offsets of an ``window x window`` neighborhood in row-major order, center excluded."""
    return _neighbor_offsets(check_window(window))


@functools.lru_cache(maxsize=None)
def _neighbor_offsets(window: int) -> tuple[NeighborOffset, ...]:
    half = window // 2
    offsets = []
    for drow in range(-half, half + 1):
        for dcol in range(-half, half + 1):
            if drow == 0 and dcol == 0:
                continue
            offsets.append(NeighborOffset(drow, dcol, len(offsets)))
    return tuple(offsets)


def pad_spatial(values: np.ndarray, half: int) -> np.ndarray:
    """Zero-pad the two spatial axes of a ``(..., H, W, C)`` array by ``half`` on each side."""
    *lead, height, width, ch = values.shape
    out = np.zeros((*lead, height + 2 * half, width + 2 * half, ch), dtype=values.dtype)
    out[..., half : half + height, half : half + width, :] = values
    return out


def shifted_views(values: np.ndarray, window: int, padded: np.ndarray | None = None) -> list[np.ndarray]:
    """Views of the zero-padded map, one per neighbor offset, without copying.

    ``views[i][..., r, c, :]`` is the neighbor of ``(r, c)`` at
    ``neighbor_offsets(window)[i]`` (zeros outside the map).
    """
    half = check_window(window) // 2
    height, width = values.shape[-3], values.shape[-2]
    if padded is None:
        padded = pad_spatial(values, half)
    return [
        padded[..., half + o.drow : half + o.drow + height, half + o.dcol : half + o.dcol + width, :]
        for o in neighbor_offsets(window)
    ]


def shift_zero_padded(values: np.ndarray, drow: int, dcol: int) -> np.ndarray:
    """Return ``out`` with ``out[..., r, c, :] = values[..., r + drow, c + dcol, :]``.

    Positions that fall outside the map read zeros. Works on ``(..., H, W, C)``.
    """
    height, width = values.shape[-3], values.shape[-2]
    out = np.zeros_like(values)
    if abs(drow) >= height or abs(dcol) >= width:
        return out
    dst_r = slice(max(0, -drow), height - max(0, drow))
    src_r = slice(max(0, drow), height - max(0, -drow))
    dst_c = slice(max(0, -dcol), width - max(0, dcol))
    src_c = slice(max(0, dcol), width - max(0, -dcol))
    out[..., dst_r, dst_c, :] = values[..., src_r, src_c, :]
    return out


def shifted_stack(values: np.ndarray, window: int) -> np.ndarray:
    """Stack of zero-padded shifted copies, shape ``(N*N - 1, *values.shape)``."""
    return np.stack(shifted_views(values, window))


# Reductions over a short trailing class axis are several times faster as a
# loop over class slices than as a single numpy reduction.


def class_max(values: np.ndarray) -> np.ndarray:
    out = np.array(values[..., 0])
    for c in range(1, values.shape[-1]):
        np.maximum(out, values[..., c], out=out)
    return out


def class_sum(values: np.ndarray) -> np.ndarray:
    out = np.array(values[..., 0])
    for c in range(1, values.shape[-1]):
        out += values[..., c]
    return out


def class_top2(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Largest and second-largest value along the class axis (needs C >= 2)."""
    first = np.array(np.maximum(values[..., 0], values[..., 1]))
    second = np.array(np.minimum(values[..., 0], values[..., 1]))
    for c in range(2, values.shape[-1]):
        v = values[..., c]
        np.maximum(second, np.minimum(first, v), out=second)
        np.maximum(first, v, out=first)
    return first, second


def neighborhood(pmap: ProbMap, row: int, col: int, window: int) -> list[tuple[NeighborOffset, np.ndarray]]:
    offsets = neighbor_offsets(window)
    if not (0 <= row < pmap.height and 0 <= col < pmap.width):
        raise ValueError(f"pixel ({row}, {col}) outside {pmap.height}x{pmap.width} map")
    zeros = np.zeros(pmap.classes, dtype=pmap.values.dtype)
    entries = []
    for off in offsets:
        r, c = row + off.drow, col + off.dcol
        if 0 <= r < pmap.height and 0 <= c < pmap.width:
            entries.append((off, pmap.values[r, c].copy()))
        else:
            entries.append((off, zeros.copy()))
    return entries


def quantile(values, q: float) -> float:
    """Nearest-rank quantile: the ``ceil(q * n)``-th smallest value (q=0 gives the minimum)."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("quantile of an empty collection")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile level must be in [0, 1], got {q}")
    # q * n can land a hair above an integer (0.7 * 10), which would skip a rank
    rank = max(1, math.ceil(q * arr.size - 1e-9))
    return float(np.partition(arr, rank - 1)[rank - 1])


def check_label_mask(mask: np.ndarray, classes: int) -> np.ndarray:
    mask = np.asarray(mask)
    if not np.issubdtype(mask.dtype, np.integer):
        raise ValueError(f"label mask must be integer typed, got {mask.dtype}")
    valid = mask != IGNORE
    if np.any(mask[valid] < 0) or np.any(mask[valid] >= classes):
        raise ValueError(f"label mask entries must be IGNORE or in [0, {classes})")
    return mask
