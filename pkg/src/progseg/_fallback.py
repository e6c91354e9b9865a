"""Pure numpy versions of the kernels in ``_core.pyx``.

Same signatures and the same boundary rules, so either module can back
``progseg.kernels``.
"""

import numpy as np
from scipy.ndimage import uniform_filter


def _bilinear_deposit(xw, yw, w, width, height):
    # the four corner indices and weights of every warped event
    inside = (xw > -1.0) & (xw < width) & (yw > -1.0) & (yw < height)
    xw, yw, w = xw[inside], yw[inside], w[inside]
    ix = np.floor(xw).astype(np.int64)
    iy = np.floor(yw).astype(np.int64)
    fx = xw - ix
    fy = yw - iy
    out = np.zeros(height * width, dtype=np.float64)
    for dx, dy, wt in (
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ):
        cx = ix + dx
        cy = iy + dy
        ok = (cx >= 0) & (cx < width) & (cy >= 0) & (cy < height)
        out += np.bincount(
            cy[ok] * width + cx[ok], weights=w[ok] * wt[ok], minlength=height * width
        )
    return out.reshape(height, width)


def splat_warped(x, y, t, w, vx, vy, t_ref, width, height):
    dt = t - t_ref
    return _bilinear_deposit(x - dt * vx, y - dt * vy, np.asarray(w, float), width, height)


def splat_warped_pair(x, y, t, w, b, vx, vy, t_ref, width, height):
    dt = t - t_ref
    xw = x - dt * vx
    yw = y - dt * vy
    return (
        _bilinear_deposit(xw, yw, np.asarray(w, float), width, height),
        _bilinear_deposit(xw, yw, np.asarray(b, float), width, height),
    )


def sample_warped(img, x, y, t, vx, vy, t_ref):
    height, width = img.shape
    dt = t - t_ref
    xw = x - dt * vx
    yw = y - dt * vy
    out = np.zeros(len(xw), dtype=np.float64)
    inside = (xw >= 0.0) & (xw <= width - 1) & (yw >= 0.0) & (yw <= height - 1)
    xi, yi = xw[inside], yw[inside]
    ix = np.floor(xi).astype(np.int64)
    iy = np.floor(yi).astype(np.int64)
    fx = xi - ix
    fy = yi - iy
    # pad by one so the +1 neighbours at the last row/column read zero
    padded = np.zeros((height + 1, width + 1))
    padded[:height, :width] = img
    out[inside] = (
        padded[iy, ix] * (1.0 - fx) * (1.0 - fy)
        + padded[iy, ix + 1] * fx * (1.0 - fy)
        + padded[iy + 1, ix] * (1.0 - fx) * fy
        + padded[iy + 1, ix + 1] * fx * fy
    )
    return out


def box_variance(img, window):
    img = np.asarray(img, dtype=np.float64)
    mean = uniform_filter(img, size=window, mode="constant", cval=0.0)
    mean_sq = uniform_filter(img * img, size=window, mode="constant", cval=0.0)
    return np.maximum(mean_sq - mean * mean, 0.0)


def st_filter(x, y, t, width, height, radius, dt):
    n = len(t)
    keep = np.zeros(n, dtype=bool)
    grid = np.full((height, width), -np.inf)
    for k in range(n):
        xk, yk = x[k], y[k]
        window = grid[max(yk - radius, 0) : yk + radius + 1, max(xk - radius, 0) : xk + radius + 1]
        if t[k] - window.max() <= dt:
            keep[k] = True
        grid[yk, xk] = t[k]
    grid.fill(np.inf)
    for k in range(n - 1, -1, -1):
        xk, yk = x[k], y[k]
        if not keep[k]:
            window = grid[max(yk - radius, 0) : yk + radius + 1, max(xk - radius, 0) : xk + radius + 1]
            if window.min() - t[k] <= dt:
                keep[k] = True
        grid[yk, xk] = t[k]
    return keep
