"""Event denoising: confidence that each event is real, per cluster.

An event that lies on a structure moving with cluster ``j`` lands, after
warping by ``theta_j``, on a pixel where many same-polarity events pile up;
a background-activity event lands alone. The magnitude of the
polarity-signed, timespan-normalised image of warped events at the event's
own warped position is therefore its correlation score, which is squashed
into ``[0, 1]`` with a scale set by the mean score.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Optional

import numpy as np

from progseg import kernels
from progseg.errors import DegenerateCorrelation
from progseg.warp import accumulate_iec

log = logging.getLogger(__name__)

MAPPINGS = {
    "tanh": np.tanh,
    "linear_clamp": lambda z: np.minimum(z, 1.0),
    "exp_saturate": lambda z: 1.0 - np.exp(-z),
    "hard_step": lambda z: (z >= 1.0).astype(np.float64),
}

# command-line spellings
MAPPING_ALIASES = {"tanh": "tanh", "linear": "linear_clamp", "exp": "exp_saturate", "step": "hard_step"}


def mapping_kind(name):
    kind = MAPPING_ALIASES.get(name, name)
    if kind not in MAPPINGS:
        raise ValueError(f"unknown mapping {name!r}")
    return kind


@dataclasses.dataclass(frozen=True)
class EdConfig:
    mapping: str = "tanh"
    lam: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "mapping", mapping_kind(self.mapping))
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lambda override must be positive")


def event_correlation(packet, state):
    """``EC[i, j] = |IEC_j(x'_ij)|`` with IEC_j built from every event."""
    ec = np.empty((len(packet), state.n_clusters))
    for j, th in enumerate(state.thetas):
        iec = accumulate_iec(packet, th, state.t_ref)
        ec[:, j] = np.abs(kernels.sample_warped(iec, packet.xf, packet.yf, packet.t, th.vx, th.vy, state.t_ref))
    return ec


def compute_lambda(ec):
    mean = float(np.mean(ec)) if np.size(ec) else 0.0
    if not mean > 0:
        raise DegenerateCorrelation("mean event correlation is zero")
    return 1.0 / mean


def map_confidence(ec, lam, mapping="tanh"):
    if not lam > 0:
        raise ValueError("lambda must be positive")
    c = MAPPINGS[mapping_kind(mapping)](lam * np.asarray(ec, dtype=np.float64))
    return np.clip(c, 0.0, 1.0)


def run_ed(packet, state, cfg=EdConfig()):
    """Replace ``C``; thetas and ``P`` pass through. Degenerate input gives ``C = 0``."""
    ec = event_correlation(packet, state)
    try:
        lam = cfg.lam if cfg.lam is not None else compute_lambda(ec)
    except DegenerateCorrelation:
        log.warning("degenerate event correlation; all confidences set to zero")
        return state.replace(C=np.zeros_like(state.C), degenerate=True)
    return state.replace(C=map_confidence(ec, lam, cfg.mapping), degenerate=False)


def baseline_st_filter(packet, radius=1, dt=0.01):
    """Spatiotemporal correlation filter.

    Keeps an event iff some other event lies within Chebyshev distance
    ``radius`` and ``|t difference| <= dt``.
    """
    if radius < 1 or not dt > 0:
        raise ValueError("radius must be >= 1 and dt > 0")
    if len(packet) == 0:
        return np.zeros(0, dtype=bool)
    return kernels.st_filter(packet.x, packet.y, packet.t, packet.width, packet.height, radius, dt)
