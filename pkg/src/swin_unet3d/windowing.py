"""3D window partitioning, cyclic shifts, attention masks, relative positions.

Feature maps are laid out (T, H, W, C), optionally with a leading batch axis.
Attention operates on non-overlapping (wt, wh, ww) blocks flattened to token
sequences in row-major (t, h, w) order. When the map is cyclically shifted
before partitioning, tokens that were not neighbours before the shift end up
sharing a window; an additive mask built from pre-shift region membership
removes those pairs from attention. Padded cells get their own region so they
never attend to (or receive attention from) real cells.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .tensor import ConfigError, Tensor, reshape, transpose

__all__ = [
    "WindowSpec",
    "PartitionError",
    "window_partition",
    "window_reverse",
    "compute_shift_mask",
    "relative_position_index",
    "num_bias_rows",
    "padded_extents",
]

MASK_VALUE = -1e9  # additive pre-softmax knockout; finite to stay NaN-free in 32-bit


class PartitionError(ValueError):
    """Feature-map extents incompatible with the requested window grid."""


@dataclass(frozen=True)
class WindowSpec:
    """Window extents and cyclic-shift extents over the (T, H, W) axes."""

    window: tuple[int, int, int]
    shift: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        if len(self.window) != 3 or len(self.shift) != 3:
            raise ConfigError("WindowSpec needs 3 window and 3 shift extents")
        for w, s in zip(self.window, self.shift):
            if w < 1:
                raise ConfigError(f"window extent {w} must be positive")
            if not 0 <= s < w:
                raise ConfigError(f"shift {s} must satisfy 0 <= shift < window {w}")

    def clamp(self, dims: tuple[int, int, int]) -> "WindowSpec":
        """Shrink the window to the feature map; a shrunk axis loses its shift."""
        window = []
        shift = []
        for d, w, s in zip(dims, self.window, self.shift):
            if d < w:
                window.append(d)
                shift.append(0)
            else:
                window.append(w)
                shift.append(s)
        return WindowSpec(tuple(window), tuple(shift))

    @property
    def tokens_per_window(self) -> int:
        wt, wh, ww = self.window
        return wt * wh * ww


def padded_extents(dims: tuple[int, int, int], window: tuple[int, int, int]) -> tuple[int, int, int]:
    """Smallest per-axis extents >= dims that the window tiles exactly."""
    return tuple(-(-d // w) * w for d, w in zip(dims, window))


def _grid(dims, window):
    for name, d, w in zip("THW", dims, window):
        if d % w != 0:
            raise PartitionError(
                f"{name} extent {d} is not divisible by window extent {w}; pad first"
            )
    return tuple(d // w for d, w in zip(dims, window))


def window_partition(x: Tensor, window: tuple[int, int, int]) -> Tensor:
    """Split (T, H, W, C) or (B, T, H, W, C) into (nW, L, C) token sequences.

    Windows are enumerated row-major over (t, h, w) blocks; tokens inside a
    window are row-major over their local (t, h, w) offsets. A batch axis
    folds into the window axis as (B * nW, L, C).
    """
    if x.ndim == 4:
        t, h, w, c = x.shape
        b = 1
        x5 = reshape(x, (1, t, h, w, c))
    elif x.ndim == 5:
        b, t, h, w, c = x.shape
        x5 = x
    else:
        raise PartitionError(f"window_partition: expected 4-d or 5-d input, got {x.shape}")
    gt, gh, gw = _grid((t, h, w), window)
    wt, wh, ww = window
    blocks = reshape(x5, (b, gt, wt, gh, wh, gw, ww, c))
    ordered = transpose(blocks, (0, 1, 3, 5, 2, 4, 6, 7))
    return reshape(ordered, (b * gt * gh * gw, wt * wh * ww, c))


def window_reverse(
    windows: Tensor,
    window: tuple[int, int, int],
    dims: tuple[int, int, int],
    batch: int | None = None,
) -> Tensor:
    """Exact inverse of :func:`window_partition`.

    With ``batch=None`` the result is (T, H, W, C); otherwise (batch, T, H, W, C).
    """
    t, h, w = dims
    gt, gh, gw = _grid(dims, window)
    wt, wh, ww = window
    b = 1 if batch is None else batch
    n, tokens, c = windows.shape
    if n != b * gt * gh * gw or tokens != wt * wh * ww:
        raise PartitionError(
            f"window_reverse: {windows.shape} does not tile dims {dims} "
            f"with window {window} (batch={b})"
        )
    blocks = reshape(windows, (b, gt, gh, gw, wt, wh, ww, c))
    ordered = transpose(blocks, (0, 1, 4, 2, 5, 3, 6, 7))
    full = reshape(ordered, (b, t, h, w, c))
    if batch is None:
        return reshape(full, (t, h, w, c))
    return full


def _axis_region_ids(extent: int, padded: int, window: int, shift: int) -> np.ndarray:
    """Pre-shift contiguity region per coordinate; -1 marks padding.

    With a cyclic shift the realised attention groups along one axis are the
    intervals cut at ``{0} ∪ {k * window + shift}``; without a shift they are
    the plain window blocks.
    """
    p = np.arange(padded)
    if shift == 0:
        ids = p // window
    else:
        ids = np.where(p < shift, 0, (p - shift) // window + 1)
    return np.where(p < extent, ids, -1)


def _partition_index_volume(vol: np.ndarray, window: tuple[int, int, int]) -> np.ndarray:
    t, h, w = vol.shape
    wt, wh, ww = window
    gt, gh, gw = t // wt, h // wh, w // ww
    blocks = vol.reshape(gt, wt, gh, wh, gw, ww)
    return blocks.transpose(0, 2, 4, 1, 3, 5).reshape(gt * gh * gw, wt * wh * ww)


@functools.lru_cache(maxsize=256)
def _shift_mask_cached(dims, window, shift, padded) -> np.ndarray:
    axis_ids = [
        _axis_region_ids(d, p, w, s)
        for d, p, w, s in zip(dims, padded, window, shift)
    ]
    nt = int(axis_ids[0].max()) + 1
    nh = int(axis_ids[1].max()) + 1
    nw = int(axis_ids[2].max()) + 1
    it = axis_ids[0][:, None, None]
    ih = axis_ids[1][None, :, None]
    iw = axis_ids[2][None, None, :]
    combined = (it * nh + ih) * nw + iw
    pad_cells = (it < 0) | (ih < 0) | (iw < 0)
    combined = np.where(pad_cells, -1, combined)

    # Region ids live in original coordinates; roll them exactly like the
    # features so window-local comparison sees pre-shift membership.
    rolled = np.roll(combined, tuple(-s for s in shift), axis=(0, 1, 2))
    per_window = _partition_index_volume(rolled, window)
    same = per_window[:, :, None] == per_window[:, None, :]
    mask = np.where(same, 0.0, MASK_VALUE)
    mask.setflags(write=False)
    return mask


def compute_shift_mask(
    dims: tuple[int, int, int],
    spec: WindowSpec,
    padded: tuple[int, int, int] | None = None,
) -> np.ndarray:
    """Additive attention mask of shape (nW, L, L) over the padded window grid.

    Entry (w, i, j) is 0 when tokens i and j of window w come from the same
    pre-shift contiguous region (and neither is padding), else a large
    negative value. With zero shift and no padding the mask is all zeros.
    """
    dims = tuple(int(d) for d in dims)
    spec = spec.clamp(dims)
    if padded is None:
        padded = padded_extents(dims, spec.window)
    else:
        padded = tuple(int(p) for p in padded)
        for d, p, w in zip(dims, padded, spec.window):
            if p < d or p % w != 0:
                raise PartitionError(f"padded extents {padded} incompatible with {dims}/{spec.window}")
    return _shift_mask_cached(dims, spec.window, spec.shift, padded)


def needs_mask(dims: tuple[int, int, int], spec: WindowSpec) -> bool:
    spec = spec.clamp(dims)
    return any(spec.shift) or padded_extents(dims, spec.window) != tuple(dims)


def num_bias_rows(window: tuple[int, int, int]) -> int:
    wt, wh, ww = window
    return (2 * wt - 1) * (2 * wh - 1) * (2 * ww - 1)


@functools.lru_cache(maxsize=64)
def relative_position_index(
    window: tuple[int, int, int],
    table_window: tuple[int, int, int] | None = None,
) -> np.ndarray:
    """(L, L) table sending each token pair to its displacement's bias row.

    The row depends only on coords(i) - coords(j); opposite displacements get
    distinct rows. With ``table_window`` the rows address the bias table of a
    larger window (of which this window's displacements are a subset), so one
    table serves every clamped variant.
    """
    wt, wh, ww = window
    if table_window is None:
        table_window = window
    bt, bh, bw = table_window
    if wt > bt or wh > bh or ww > bw:
        raise ConfigError(f"window {window} exceeds bias-table window {table_window}")
    coords = np.stack(
        np.meshgrid(np.arange(wt), np.arange(wh), np.arange(ww), indexing="ij")
    ).reshape(3, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    rel = rel + np.array([bt - 1, bh - 1, bw - 1]).reshape(3, 1, 1)
    index = (rel[0] * (2 * bh - 1) + rel[1]) * (2 * bw - 1) + rel[2]
    index.setflags(write=False)
    return index
