"""Pure-NumPy kernel implementations.

Fallback backend used when the compiled extension is unavailable. The
compiled core in ``_core.pyx`` implements the same contracts with the same
sampling conventions; the two must agree to float rounding (tested).
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def _sliding_extreme(arr: np.ndarray, radius: int, axis: int, op) -> np.ndarray:
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="constant", constant_values=0)
    windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * radius + 1, axis=axis)
    return op(windows, axis=-1)


def erode3d(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary erosion with a cubic structuring element of side 2*radius+1.

    Out-of-bounds voxels count as background, so foreground touching the
    border erodes. The cube is separable: three axial min-filters.
    """
    out = np.ascontiguousarray(mask, dtype=np.uint8)
    for axis in range(3):
        out = _sliding_extreme(out, radius, axis, np.min)
    return np.ascontiguousarray(out)


def dilate3d(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a cubic structuring element of side 2*radius+1."""
    out = np.ascontiguousarray(mask, dtype=np.uint8)
    for axis in range(3):
        out = _sliding_extreme(out, radius, axis, np.max)
    return np.ascontiguousarray(out)


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping.

    Source coordinate for destination pixel d is (d + 0.5) * scale - 0.5;
    matches the common align_corners=False convention.
    """
    image = np.asarray(image, dtype=np.float32)
    in_h, in_w = image.shape
    if (in_h, in_w) == (out_h, out_w):
        return image.copy()

    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)

    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0).astype(np.float32)[:, None]
    wx = (xs - x0).astype(np.float32)[None, :]

    top = image[y0[:, None], x0[None, :]] * (1 - wx) + image[y0[:, None], x1[None, :]] * wx
    bot = image[y1[:, None], x0[None, :]] * (1 - wx) + image[y1[:, None], x1[None, :]] * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


def rotate_bilinear(image: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate about the image center, bilinear resampling, zero fill.

    Positive angles rotate counter-clockwise in (row, col) display
    coordinates. angle 0 is an exact identity.
    """
    image = np.asarray(image, dtype=np.float32)
    if angle_deg == 0.0:
        return image.copy()

    h, w = image.shape
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    theta = np.deg2rad(angle_deg)
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)

    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy = yy - cy
    dx = xx - cx
    # inverse mapping: source = R(-theta) . dest
    sy = cos_t * dy + sin_t * dx + cy
    sx = -sin_t * dy + cos_t * dx + cx

    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    wy = (sy - y0).astype(np.float32)
    wx = (sx - x0).astype(np.float32)

    out = np.zeros((h, w), dtype=np.float32)
    for oy, ox, weight in (
        (y0, x0, (1 - wy) * (1 - wx)),
        (y0, x0 + 1, (1 - wy) * wx),
        (y0 + 1, x0, wy * (1 - wx)),
        (y0 + 1, x0 + 1, wy * wx),
    ):
        valid = (oy >= 0) & (oy < h) & (ox >= 0) & (ox < w)
        out[valid] += weight[valid] * image[oy[valid], ox[valid]]
    return out
