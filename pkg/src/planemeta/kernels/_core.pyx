# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel core.

Mirrors ``_numpy.py`` operation for operation, with identical sampling
conventions and float32 arithmetic order so results match the fallback.
"""

import numpy as np

from libc.math cimport floor, cos, sin

BACKEND = "compiled"

cdef double DEG2RAD = 0.017453292519943295


def erode3d(mask, int radius):
    """Binary erosion, cubic structuring element of side 2*radius+1,
    out-of-bounds treated as background."""
    cdef unsigned char[:, :, ::1] src = np.ascontiguousarray(mask, dtype=np.uint8)
    out = _min_filter_axes(src, radius, 1)
    return out


def dilate3d(mask, int radius):
    """Binary dilation, cubic structuring element of side 2*radius+1."""
    cdef unsigned char[:, :, ::1] src = np.ascontiguousarray(mask, dtype=np.uint8)
    out = _min_filter_axes(src, radius, 0)
    return out


cdef _min_filter_axes(unsigned char[:, :, ::1] src, int radius, int take_min):
    # Separable pass along each axis; take_min selects erosion vs dilation.
    cdef int n0 = src.shape[0], n1 = src.shape[1], n2 = src.shape[2]
    a = np.asarray(src)
    for axis in range(3):
        a = _extreme_1d(np.ascontiguousarray(a), radius, axis, take_min)
    return a


cdef _extreme_1d(unsigned char[:, :, ::1] src, int radius, int axis, int take_min):
    cdef int n0 = src.shape[0], n1 = src.shape[1], n2 = src.shape[2]
    dst_np = np.empty((n0, n1, n2), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] dst = dst_np
    cdef int i, j, k, t, lo, hi, n
    cdef unsigned char acc, v

    with nogil:
        if axis == 0:
            n = n0
            for j in range(n1):
                for k in range(n2):
                    for i in range(n):
                        lo = i - radius
                        hi = i + radius
                        if take_min and (lo < 0 or hi >= n):
                            dst[i, j, k] = 0
                            continue
                        if lo < 0: lo = 0
                        if hi >= n: hi = n - 1
                        acc = src[lo, j, k]
                        for t in range(lo + 1, hi + 1):
                            v = src[t, j, k]
                            if take_min:
                                if v < acc: acc = v
                            else:
                                if v > acc: acc = v
                        dst[i, j, k] = acc
        elif axis == 1:
            n = n1
            for i in range(n0):
                for k in range(n2):
                    for j in range(n):
                        lo = j - radius
                        hi = j + radius
                        if take_min and (lo < 0 or hi >= n):
                            dst[i, j, k] = 0
                            continue
                        if lo < 0: lo = 0
                        if hi >= n: hi = n - 1
                        acc = src[i, lo, k]
                        for t in range(lo + 1, hi + 1):
                            v = src[i, t, k]
                            if take_min:
                                if v < acc: acc = v
                            else:
                                if v > acc: acc = v
                        dst[i, j, k] = acc
        else:
            n = n2
            for i in range(n0):
                for j in range(n1):
                    for k in range(n):
                        lo = k - radius
                        hi = k + radius
                        if take_min and (lo < 0 or hi >= n):
                            dst[i, j, k] = 0
                            continue
                        if lo < 0: lo = 0
                        if hi >= n: hi = n - 1
                        acc = src[i, j, lo]
                        for t in range(lo + 1, hi + 1):
                            v = src[i, j, t]
                            if take_min:
                                if v < acc: acc = v
                            else:
                                if v > acc: acc = v
                        dst[i, j, k] = acc
    return dst_np


def resize_bilinear(image, int out_h, int out_w):
    """Bilinear resize with half-pixel centers and edge clamping."""
    cdef float[:, ::1] src = np.ascontiguousarray(image, dtype=np.float32)
    cdef int in_h = src.shape[0], in_w = src.shape[1]
    if in_h == out_h and in_w == out_w:
        return np.asarray(src).copy()

    dst_np = np.empty((out_h, out_w), dtype=np.float32)
    cdef float[:, ::1] dst = dst_np
    cdef double scale_y = in_h / <double>out_h
    cdef double scale_x = in_w / <double>out_w
    cdef int oy, ox, y0, x0, y1, x1
    cdef double sy, sx
    cdef float wy, wx, top, bot

    with nogil:
        for oy in range(out_h):
            sy = (oy + 0.5) * scale_y - 0.5
            if sy < 0.0: sy = 0.0
            if sy > in_h - 1.0: sy = in_h - 1.0
            y0 = <int>floor(sy)
            y1 = y0 + 1
            if y1 > in_h - 1: y1 = in_h - 1
            wy = <float>(sy - y0)
            for ox in range(out_w):
                sx = (ox + 0.5) * scale_x - 0.5
                if sx < 0.0: sx = 0.0
                if sx > in_w - 1.0: sx = in_w - 1.0
                x0 = <int>floor(sx)
                x1 = x0 + 1
                if x1 > in_w - 1: x1 = in_w - 1
                wx = <float>(sx - x0)
                top = src[y0, x0] * (1 - wx) + src[y0, x1] * wx
                bot = src[y1, x0] * (1 - wx) + src[y1, x1] * wx
                dst[oy, ox] = top * (1 - wy) + bot * wy
    return dst_np


def rotate_bilinear(image, double angle_deg):
    """Rotate about the image center, bilinear resampling, zero fill."""
    cdef float[:, ::1] src = np.ascontiguousarray(image, dtype=np.float32)
    if angle_deg == 0.0:
        return np.asarray(src).copy()

    cdef int h = src.shape[0], w = src.shape[1]
    dst_np = np.zeros((h, w), dtype=np.float32)
    cdef float[:, ::1] dst = dst_np
    cdef double cy = (h - 1) / 2.0
    cdef double cx = (w - 1) / 2.0
    cdef double theta = angle_deg * DEG2RAD
    cdef double cos_t = cos(theta)
    cdef double sin_t = sin(theta)
    cdef int oy, ox, y0, x0
    cdef double dy, dx, sy, sx
    cdef float wy, wx, acc

    with nogil:
        for oy in range(h):
            dy = oy - cy
            for ox in range(w):
                dx = ox - cx
                sy = cos_t * dy + sin_t * dx + cy
                sx = -sin_t * dy + cos_t * dx + cx
                y0 = <int>floor(sy)
                x0 = <int>floor(sx)
                wy = <float>(sy - y0)
                wx = <float>(sx - x0)
                acc = 0
                if 0 <= y0 < h and 0 <= x0 < w:
                    acc = acc + (1 - wy) * (1 - wx) * src[y0, x0]
                if 0 <= y0 < h and 0 <= x0 + 1 < w:
                    acc = acc + (1 - wy) * wx * src[y0, x0 + 1]
                if 0 <= y0 + 1 < h and 0 <= x0 < w:
                    acc = acc + wy * (1 - wx) * src[y0 + 1, x0]
                if 0 <= y0 + 1 < h and 0 <= x0 + 1 < w:
                    acc = acc + wy * wx * src[y0 + 1, x0 + 1]
                dst[oy, ox] = acc
    return dst_np
