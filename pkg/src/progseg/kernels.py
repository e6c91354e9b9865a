"""Backend selection for the inner loops.

The compiled ``_core`` extension is used when it imports; otherwise the numpy
implementation in ``_fallback`` takes over. ``PROGSEG_BACKEND=python`` forces
the fallback (handy for comparing the two).
"""

import os

import numpy as np

from progseg import _fallback

try:
    from progseg import _core
except ImportError:  # extension not built
    _core = None

if _core is not None and os.environ.get("PROGSEG_BACKEND", "").lower() not in ("python", "numpy"):
    _impl = _core
    BACKEND = "cython"
else:
    _impl = _fallback
    BACKEND = "python"

BACKENDS = {"python": _fallback}
if _core is not None:
    BACKENDS["cython"] = _core


def _resolve(impl):
    """``None`` -> active backend; a name looks up ``BACKENDS``; a module passes through."""
    if impl is None:
        return _impl
    if isinstance(impl, str):
        try:
            return BACKENDS[impl]
        except KeyError:
            raise ValueError(f"backend {impl!r} unavailable; have {sorted(BACKENDS)}") from None
    return impl


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def splat_warped(x, y, t, w, vx, vy, t_ref, width, height, impl=None):
    """Bilinear splat of weights ``w`` at the positions warped by ``(vx, vy)``."""
    impl = _resolve(impl)
    return impl.splat_warped(
        _f64(x), _f64(y), _f64(t), _f64(w), float(vx), float(vy), float(t_ref), int(width), int(height)
    )


def splat_warped_pair(x, y, t, w, b, vx, vy, t_ref, width, height, impl=None):
    impl = _resolve(impl)
    return impl.splat_warped_pair(
        _f64(x), _f64(y), _f64(t), _f64(w), _f64(b),
        float(vx), float(vy), float(t_ref), int(width), int(height),
    )


def sample_warped(img, x, y, t, vx, vy, t_ref, impl=None):
    impl = _resolve(impl)
    return impl.sample_warped(_f64(img), _f64(x), _f64(y), _f64(t), float(vx), float(vy), float(t_ref))


def box_variance(img, window, impl=None):
    impl = _resolve(impl)
    return impl.box_variance(_f64(img), int(window))


def st_filter(x, y, t, width, height, radius, dt, impl=None):
    impl = _resolve(impl)
    return impl.st_filter(
        np.ascontiguousarray(x, dtype="l"), np.ascontiguousarray(y, dtype="l"), _f64(t),
        int(width), int(height), int(radius), float(dt),
    )
