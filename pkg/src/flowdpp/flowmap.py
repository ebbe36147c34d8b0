"""Flow-map post-processing: turn a dense flow magnitude map into per-cell
confidence thresholds.

The pipeline is: shift so the minimum is zero, take the absolute deviation
from the median (large deviation = moving pixel), squash through a sigmoid,
resize to the detector's grid, then map each squashed value f to a threshold
c_th / (1 + exp(2 f)).  Larger flow deviation gives a lower threshold, so
cells with motion admit lower-confidence boxes.

All functions are pure and operate on 2-D float arrays.
"""

import numpy as np

__all__ = [
    "shift_min",
    "center_abs_median",
    "squash",
    "resize_bicubic",
    "vectorize_thresholds",
    "process",
]


def _as_flow_map(values):
    """Validate and return a flow map as a 2-D float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"flow map must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("flow map contains non-finite values")
    return arr


def shift_min(values, scale_range=False):
    """Shift the map so its minimum value is exactly zero.

    With scale_range=True the shifted map is also divided by (max - min),
    mapping values into [0, 1]; a constant map stays all-zero rather than
    dividing by zero.  The default performs the shift only.
    """
    arr = _as_flow_map(values)
    out = arr - arr.min()
    if scale_range:
        span = out.max()
        if span > 0.0:
            out = out / span
    return out


def center_abs_median(values):
    """Absolute deviation from the map-wide median.

    Values near the median are static pixels and map to ~0; values near either
    extreme are moving pixels and map to large deviations.
    """
    arr = _as_flow_map(values)
    return np.abs(arr - np.median(arr))


def squash(values):
    """Elementwise logistic sigmoid; non-negative inputs land in [0.5, 1)."""
    arr = _as_flow_map(values)
    return 1.0 / (1.0 + np.exp(-arr))


def _keys_kernel(x, a=-0.5):
    """Classical cubic convolution kernel with free parameter a."""
    ax = np.abs(x)
    inner = ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0
    outer = a * (((ax - 5.0) * ax + 8.0) * ax - 4.0)
    return np.where(ax <= 1.0, inner, np.where(ax < 2.0, outer, 0.0))


def _resize_weights(n_src, n_dst):
    """Dense (n_dst, n_src) bicubic weight matrix, clamp-to-edge taps.

    Output sample i reads source coordinate (i + 0.5) * scale - 0.5, the
    center-aligned convention, which degenerates to the identity matrix when
    n_src == n_dst.
    """
    scale = n_src / n_dst
    x = (np.arange(n_dst) + 0.5) * scale - 0.5
    base = np.floor(x).astype(int)
    frac = x - base
    offsets = np.arange(-1, 3)
    taps = base[:, None] + offsets[None, :]
    weights = _keys_kernel(frac[:, None] - offsets[None, :])
    taps = np.clip(taps, 0, n_src - 1)
    mat = np.zeros((n_dst, n_src))
    np.add.at(mat, (np.repeat(np.arange(n_dst), 4), taps.ravel()), weights.ravel())
    return mat


def resize_bicubic(values, target_rows, target_cols):
    """Separable bicubic resize (Keys kernel, a = -0.5, clamped borders)."""
    arr = _as_flow_map(values)
    if target_rows < 1 or target_cols < 1:
        raise ValueError("target dimensions must be >= 1")
    rows, cols = arr.shape
    if (target_rows, target_cols) == (rows, cols):
        return arr.copy()
    row_w = _resize_weights(rows, target_rows)
    col_w = _resize_weights(cols, target_cols)
    return row_w @ arr @ col_w.T


def vectorize_thresholds(values, num_boxes, c_th):
    """Flatten a squashed map row-major, replicate it num_boxes times, and map
    each value f to the threshold c_th / (1 + exp(2 f)).

    The output has length rows * cols * num_boxes and consists of num_boxes
    identical blocks; entry for cell (i, j) and box k lives at index
    k * rows * cols + i * cols + j.
    """
    arr = _as_flow_map(values)
    if not 0.0 < c_th <= 1.0:
        raise ValueError(f"c_th must be in (0, 1], got {c_th}")
    if num_boxes < 1:
        raise ValueError("num_boxes must be >= 1")
    flat = np.tile(arr.ravel(order="C"), num_boxes)
    return c_th / (1.0 + np.exp(2.0 * flat))


def process(values, grid_rows, grid_cols, num_boxes, c_th, scale_range=False):
    """Full pipeline from raw flow map to per-cell threshold vector.

    scale_range additionally normalizes the shifted map by its range before
    taking deviations (see shift_min).

    Bicubic interpolation can overshoot the source range; the resized map is
    clipped back to the squashed map's [min, max] so thresholds keep the
    sigmoid-image bounds (at most c_th/2, at least c_th/(1+e^2)).
    Runtime is linear in the number of map pixels.
    """
    arr = squash(center_abs_median(shift_min(values, scale_range)))
    resized = resize_bicubic(arr, grid_rows, grid_cols)
    np.clip(resized, arr.min(), arr.max(), out=resized)
    return vectorize_thresholds(resized, num_boxes, c_th)
