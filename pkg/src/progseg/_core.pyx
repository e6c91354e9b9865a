# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Every function here has a numpy twin in ``_fallback``."""

import numpy as np

from libc.math cimport floor, INFINITY


cdef inline void _deposit(double[:, ::1] img, double x, double y, double w,
                          Py_ssize_t width, Py_ssize_t height) noexcept nogil:
    cdef Py_ssize_t ix, iy
    cdef double fx, fy
    # also rejects NaN
    if not (x > -1.0 and x < width and y > -1.0 and y < height):
        return
    ix = <Py_ssize_t>floor(x)
    iy = <Py_ssize_t>floor(y)
    fx = x - ix
    fy = y - iy
    if iy >= 0:
        if ix >= 0:
            img[iy, ix] += w * (1.0 - fx) * (1.0 - fy)
        if ix + 1 < width:
            img[iy, ix + 1] += w * fx * (1.0 - fy)
    if iy + 1 < height:
        if ix >= 0:
            img[iy + 1, ix] += w * (1.0 - fx) * fy
        if ix + 1 < width:
            img[iy + 1, ix + 1] += w * fx * fy


def splat_warped(const double[::1] x, const double[::1] y, const double[::1] t,
                 const double[::1] w, double vx, double vy, double t_ref,
                 Py_ssize_t width, Py_ssize_t height):
    out = np.zeros((height, width), dtype=np.float64)
    cdef double[:, ::1] img = out
    cdef Py_ssize_t k, n = x.shape[0]
    cdef double dt
    with nogil:
        for k in range(n):
            if w[k] == 0.0:
                continue
            dt = t[k] - t_ref
            _deposit(img, x[k] - dt * vx, y[k] - dt * vy, w[k], width, height)
    return out


def splat_warped_pair(const double[::1] x, const double[::1] y, const double[::1] t,
                      const double[::1] w, const double[::1] b,
                      double vx, double vy, double t_ref,
                      Py_ssize_t width, Py_ssize_t height):
    """Two splats sharing one warp: weights ``w`` and ``b`` into separate images."""
    out_w = np.zeros((height, width), dtype=np.float64)
    out_b = np.zeros((height, width), dtype=np.float64)
    cdef double[:, ::1] img_w = out_w
    cdef double[:, ::1] img_b = out_b
    cdef Py_ssize_t k, n = x.shape[0]
    cdef double dt, xw, yw
    with nogil:
        for k in range(n):
            dt = t[k] - t_ref
            xw = x[k] - dt * vx
            yw = y[k] - dt * vy
            if w[k] != 0.0:
                _deposit(img_w, xw, yw, w[k], width, height)
            _deposit(img_b, xw, yw, b[k], width, height)
    return out_w, out_b


def sample_warped(const double[:, ::1] img, const double[::1] x, const double[::1] y,
                  const double[::1] t, double vx, double vy, double t_ref):
    cdef Py_ssize_t height = img.shape[0], width = img.shape[1]
    cdef Py_ssize_t k, n = x.shape[0], ix, iy
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] res = out
    cdef double dt, xw, yw, fx, fy, v
    with nogil:
        for k in range(n):
            dt = t[k] - t_ref
            xw = x[k] - dt * vx
            yw = y[k] - dt * vy
            if not (xw >= 0.0 and xw <= width - 1 and yw >= 0.0 and yw <= height - 1):
                continue
            ix = <Py_ssize_t>floor(xw)
            iy = <Py_ssize_t>floor(yw)
            fx = xw - ix
            fy = yw - iy
            v = img[iy, ix] * (1.0 - fx) * (1.0 - fy)
            if ix + 1 < width:
                v += img[iy, ix + 1] * fx * (1.0 - fy)
            if iy + 1 < height:
                v += img[iy + 1, ix] * (1.0 - fx) * fy
                if ix + 1 < width:
                    v += img[iy + 1, ix + 1] * fx * fy
            res[k] = v
    return out


def box_variance(const double[:, ::1] img, Py_ssize_t window):
    """Zero-padded windowed variance with divisor ``window**2``."""
    cdef Py_ssize_t height = img.shape[0], width = img.shape[1]
    cdef Py_ssize_t r = window // 2
    cdef Py_ssize_t i, j, d, lo, hi
    cdef double s, s2, v, inv = 1.0 / (window * window), mean
    tmp1 = np.zeros((height, width), dtype=np.float64)
    tmp2 = np.zeros((height, width), dtype=np.float64)
    out = np.zeros((height, width), dtype=np.float64)
    cdef double[:, ::1] h1 = tmp1
    cdef double[:, ::1] h2 = tmp2
    cdef double[:, ::1] res = out
    with nogil:
        for i in range(height):
            for j in range(width):
                lo = j - r if j >= r else 0
                hi = j + r if j + r < width else width - 1
                s = 0.0
                s2 = 0.0
                for d in range(lo, hi + 1):
                    v = img[i, d]
                    s = s + v
                    s2 = s2 + v * v
                h1[i, j] = s
                h2[i, j] = s2
        for i in range(height):
            lo = i - r if i >= r else 0
            hi = i + r if i + r < height else height - 1
            for j in range(width):
                s = 0.0
                s2 = 0.0
                for d in range(lo, hi + 1):
                    s = s + h1[d, j]
                    s2 = s2 + h2[d, j]
                mean = s * inv
                v = s2 * inv - mean * mean
                res[i, j] = v if v > 0.0 else 0.0
    return out


def st_filter(const long[::1] x, const long[::1] y, const double[::1] t,
              Py_ssize_t width, Py_ssize_t height, Py_ssize_t radius, double dt):
    """Keep mask: another event within Chebyshev ``radius`` and ``|dt|``.

    Events must be sorted by time. One forward pass against a last-seen grid
    and one backward pass against a next-seen grid.
    """
    cdef Py_ssize_t n = x.shape[0], k, i, j, ylo, yhi, xlo, xhi
    grid_arr = np.empty((height, width), dtype=np.float64)
    keep_arr = np.zeros(n, dtype=np.uint8)
    cdef double[:, ::1] grid = grid_arr
    cdef unsigned char[::1] keep = keep_arr
    cdef bint hit
    with nogil:
        for i in range(height):
            for j in range(width):
                grid[i, j] = -INFINITY
        for k in range(n):
            ylo = y[k] - radius if y[k] >= radius else 0
            yhi = y[k] + radius if y[k] + radius < height else height - 1
            xlo = x[k] - radius if x[k] >= radius else 0
            xhi = x[k] + radius if x[k] + radius < width else width - 1
            hit = False
            for i in range(ylo, yhi + 1):
                for j in range(xlo, xhi + 1):
                    if t[k] - grid[i, j] <= dt:
                        hit = True
                        break
                if hit:
                    break
            if hit:
                keep[k] = 1
            grid[y[k], x[k]] = t[k]
        for i in range(height):
            for j in range(width):
                grid[i, j] = INFINITY
        for k in range(n - 1, -1, -1):
            ylo = y[k] - radius if y[k] >= radius else 0
            yhi = y[k] + radius if y[k] + radius < height else height - 1
            xlo = x[k] - radius if x[k] >= radius else 0
            xhi = x[k] + radius if x[k] + radius < width else width - 1
            if keep[k] == 0:
                hit = False
                for i in range(ylo, yhi + 1):
                    for j in range(xlo, xhi + 1):
                        if grid[i, j] - t[k] <= dt:
                            hit = True
                            break
                    if hit:
                        break
                if hit:
                    keep[k] = 1
            grid[y[k], x[k]] = t[k]
    return keep_arr.astype(bool)
