"""Alignment objectives over images of warped events.

The main objective is the correlation-weighted local variance: the windowed
variance of a cluster's weighted image, averaged with weights ``|IEC|`` so
that only pixels with temporally consistent structure count. The three
classic focus measures (global variance, gradient and Hessian magnitude) are
kept for comparison.
"""

from __future__ import annotations

import dataclasses
from typing import NamedTuple

import numpy as np

from progseg import kernels
from progseg.errors import BadWindow, GeometryMismatch

DEFAULT_WINDOW = 5
CANDIDATE_WINDOWS = (3, 5, 7, 9)


@dataclasses.dataclass(frozen=True)
class SharpnessConfig:
    window: int = DEFAULT_WINDOW
    window_search: bool = False
    candidates: tuple = CANDIDATE_WINDOWS

    def __post_init__(self):
        _check_window(self.window)
        for w in self.candidates:
            _check_window(w)


def _check_window(window, shape=None):
    if int(window) != window or window < 3 or window % 2 == 0:
        raise BadWindow(f"window must be an odd integer >= 3, got {window}")
    if shape is not None and window > min(shape):
        raise BadWindow(f"window {window} larger than image {shape[1]}x{shape[0]}")


def local_variance(img, window=DEFAULT_WINDOW):
    """Per-pixel variance over the ``window x window`` neighbourhood.

    Pixels beyond the border count as zeros and the divisor is always
    ``window**2``.
    """
    img = np.asarray(img, dtype=np.float64)
    _check_window(window, img.shape)
    return kernels.box_variance(img, window)


class Sharpness(NamedTuple):
    value: float
    degenerate: bool


def weighted_variance_mean(var, iec):
    """``sum(var * |iec|) / sum(|iec|)`` with the degenerate flag."""
    weights = np.abs(np.asarray(iec, dtype=np.float64))
    total = weights.sum()
    if total == 0:
        return Sharpness(0.0, True)
    return Sharpness(float((np.asarray(var) * weights).sum() / total), False)


def sharpness_with_flag(wiwe, iec, window=DEFAULT_WINDOW):
    if np.shape(wiwe) != np.shape(iec):
        raise GeometryMismatch(f"{np.shape(wiwe)} vs {np.shape(iec)}")
    if not np.any(iec):
        return Sharpness(0.0, True)
    return weighted_variance_mean(local_variance(wiwe, window), iec)


def sharpness(wiwe, iec, window=DEFAULT_WINDOW):
    """``sum(Var * |IEC|) / sum(|IEC|)``; 0 when the IEC is identically zero."""
    return sharpness_with_flag(wiwe, iec, window).value


def select_window(img, candidates=CANDIDATE_WINDOWS):
    """Candidate window with the largest summed local variance (ties: smaller)."""
    if not candidates:
        raise ValueError("no candidate windows")
    best, best_score = None, -np.inf
    for w in sorted(candidates):
        score = local_variance(img, w).sum()
        if score > best_score:
            best, best_score = w, score
    return best


class AlternativeCosts(NamedTuple):
    variance: float
    grad_magnitude: float
    hessian_magnitude: float


def image_variance(img):
    return float(np.var(img))


def gradient_magnitude(img):
    """Mean of ``Ix**2 + Iy**2`` with central differences over interior pixels."""
    img = np.asarray(img, dtype=np.float64)
    ix = (img[1:-1, 2:] - img[1:-1, :-2]) / 2.0
    iy = (img[2:, 1:-1] - img[:-2, 1:-1]) / 2.0
    return float(np.mean(ix * ix + iy * iy))


def hessian_magnitude(img):
    """Mean squared Frobenius norm of the central-difference Hessian (interior)."""
    img = np.asarray(img, dtype=np.float64)
    c = img[1:-1, 1:-1]
    ixx = img[1:-1, 2:] - 2.0 * c + img[1:-1, :-2]
    iyy = img[2:, 1:-1] - 2.0 * c + img[:-2, 1:-1]
    ixy = (img[2:, 2:] - img[2:, :-2] - img[:-2, 2:] + img[:-2, :-2]) / 4.0
    return float(np.mean(ixx * ixx + 2.0 * ixy * ixy + iyy * iyy))


def alternative_costs(wiwe):
    return AlternativeCosts(image_variance(wiwe), gradient_magnitude(wiwe), hessian_magnitude(wiwe))


# name -> f(wiwe, iec, window); only "sharpness" reads the IEC
COSTS = {
    "sharpness": sharpness,
    "variance": lambda wiwe, iec, window: image_variance(wiwe),
    "gradient": lambda wiwe, iec, window: gradient_magnitude(wiwe),
    "hessian": lambda wiwe, iec, window: hessian_magnitude(wiwe),
}
