"""Motion estimation: per-cluster velocity fitting and soft event assignment.

Each cluster ``j`` owns a velocity ``theta_j``. Its weighted image of warped
events uses per-event weights ``P[:, j] * C[:, j]``; the velocity is fitted by
finite-difference gradient ascent on the alignment objective, and the
assignment probabilities are refreshed from the images sampled at each
event's warped position. The two steps alternate EM-style.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from typing import Callable, Optional

import numpy as np

from progseg import kernels
from progseg.errors import EmptyPacket
from progseg.sharpness import CANDIDATE_WINDOWS, COSTS, DEFAULT_WINDOW, local_variance, select_window
from progseg.warp import V_MAX, WarpParams

log = logging.getLogger(__name__)

# rows whose total support is below this become uniform
ROW_EPS = 1e-12


@dataclasses.dataclass(frozen=True)
class MeConfig:
    fd_step: float = 0.5
    step: float = 10.0
    min_step: float = 1e-3
    max_iters: int = 100
    tol: float = 1e-6
    em_iters: int = 5
    grid_range: float = 100.0
    grid_size: int = 21
    v_max: float = V_MAX
    window: int = DEFAULT_WINDOW
    cost: str = "sharpness"
    t_ref: Optional[float] = None

    def __post_init__(self):
        for name in ("fd_step", "step", "min_step", "tol", "grid_range", "v_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 1 or self.em_iters < 1 or self.grid_size < 1:
            raise ValueError("iteration counts and grid size must be positive")
        if self.cost not in COSTS:
            raise ValueError(f"unknown cost {self.cost!r}; choose from {sorted(COSTS)}")


@dataclasses.dataclass(frozen=True, eq=False)
class SegmentationState:
    """Joint unknowns of the segmentation.

    ``P`` and ``C`` are ``(n_events, n_clusters)``: assignment probabilities
    (rows sum to one) and per-cluster real-event confidences in ``[0, 1]``.
    """

    thetas: tuple
    P: np.ndarray
    C: np.ndarray
    t_ref: float
    sharpness: Optional[np.ndarray] = None
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "thetas", tuple(self.thetas))
        P = np.asarray(self.P, dtype=np.float64)
        C = np.asarray(self.C, dtype=np.float64)
        n_l = len(self.thetas)
        if n_l < 1:
            raise ValueError("need at least one cluster")
        if P.ndim != 2 or P.shape[1] != n_l or C.shape != P.shape:
            raise ValueError(f"P {P.shape} / C {C.shape} do not match {n_l} clusters")
        if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValueError("P rows must be non-negative and sum to 1")
        if np.any((C < 0) | (C > 1)):
            raise ValueError("C entries must lie in [0, 1]")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "C", C)

    @property
    def n_clusters(self):
        return len(self.thetas)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def permuted(self, order):
        """Clusters reordered so that new cluster ``i`` is old cluster ``order[i]``."""
        order = list(order)
        return self.replace(
            thetas=[self.thetas[i] for i in order],
            P=self.P[:, order],
            C=self.C[:, order],
            sharpness=None if self.sharpness is None else np.asarray(self.sharpness)[order],
        )


class ClusterObjective:
    """Alignment objective of one cluster as a function of its velocity."""

    def __init__(self, packet, weights, t_ref, window=DEFAULT_WINDOW, cost="sharpness"):
        self.packet = packet
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        self.t_ref = float(t_ref)
        self.window = window
        self.cost = cost
        self._fn = COSTS[cost]
        self._span = packet.t1 - packet.t0
        self.evaluations = 0

    def images(self, vx, vy):
        pk = self.packet
        wiwe, iec = kernels.splat_warped_pair(
            pk.xf, pk.yf, pk.t, self.weights, pk.pf, vx, vy, self.t_ref, pk.width, pk.height
        )
        iec /= self._span
        return wiwe, iec

    def __call__(self, vx, vy):
        self.evaluations += 1
        if self.cost == "sharpness":
            wiwe, iec = self.images(vx, vy)
            weights = np.abs(iec)
            total = weights.sum()
            if total == 0:
                return 0.0
            var = local_variance(wiwe, self.window)
            return float(np.vdot(var, weights) / total)
        pk = self.packet
        wiwe = kernels.splat_warped(
            pk.xf, pk.yf, pk.t, self.weights, vx, vy, self.t_ref, pk.width, pk.height
        )
        return self._fn(wiwe, None, self.window)


def fd_gradient(f, vx, vy, h):
    """Central finite-difference gradient of ``f(vx, vy)`` with step ``h``."""
    gx = (f(vx + h, vy) - f(vx - h, vy)) / (2.0 * h)
    gy = (f(vx, vy + h) - f(vx, vy - h)) / (2.0 * h)
    return gx, gy


def _clip(vx, vy, v_max):
    speed = math.hypot(vx, vy)
    if speed > v_max:
        return vx * v_max / speed, vy * v_max / speed
    return vx, vy


def _line_search(f, vx, vy, fx, dx, dy, step, cfg):
    """Halve from ``step`` until ``f`` does not decrease; ``None`` below ``cfg.min_step``."""
    s = step
    while s >= cfg.min_step:
        cx, cy = _clip(vx + s * dx, vy + s * dy, cfg.v_max)
        fc = f(cx, cy)
        if fc >= fx and (cx, cy) != (vx, vy):
            return cx, cy, fc, s
        s *= 0.5
    return None


def gradient_ascent(f, start, cfg, callback=None):
    """Maximise ``f(vx, vy)`` from ``start``.

    Steps along the normalised finite-difference gradient; the trial length
    starts at ``cfg.step`` (or twice the last accepted length, if smaller) and
    is halved until the objective does not decrease. When no length works
    along the gradient (typical on a narrow ridge, where one partial
    dominates) each axis is tried on its own in the uphill direction.
    Returns the final ``(vx, vy)`` and its value; the value never drops
    below ``f(start)``.
    """
    vx, vy = start
    fx = f(vx, vy)
    step = cfg.step
    for it in range(cfg.max_iters):
        gx, gy = fd_gradient(f, vx, vy, cfg.fd_step)
        gnorm = math.hypot(gx, gy)
        if not (gnorm > 0 and math.isfinite(gnorm)):
            break
        found = _line_search(f, vx, vy, fx, gx / gnorm, gy / gnorm, step, cfg)
        if found is None:
            axes = sorted(((abs(gx), math.copysign(1.0, gx), 0.0), (abs(gy), 0.0, math.copysign(1.0, gy))),
                          reverse=True)
            for mag, dx, dy in axes:
                if mag > 0:
                    found = _line_search(f, vx, vy, fx, dx, dy, step, cfg)
                    if found is not None:
                        break
        if found is None:
            break
        cx, cy, fc, s = found
        gain = (fc - fx) / abs(fx) if fx != 0 else (math.inf if fc > fx else 0.0)
        vx, vy, fx = cx, cy, fc
        if callback is not None:
            callback({"stage": "ascent", "iter": it, "theta": (vx, vy), "value": fx, "step": s})
        step = min(cfg.step, 2.0 * s)
        if gain < cfg.tol:
            break
    return (vx, vy), fx


def default_t_ref(packet, cfg):
    return packet.t0 if cfg.t_ref is None else cfg.t_ref


def velocity_grid(cfg):
    return np.linspace(-cfg.grid_range, cfg.grid_range, cfg.grid_size)


def grid_values(packet, cfg, weights=None, t_ref=None):
    """Objective on the coarse velocity grid; ``out[iy, ix]`` is at ``(g[ix], g[iy])``."""
    t_ref = default_t_ref(packet, cfg) if t_ref is None else t_ref
    weights = np.ones(len(packet)) if weights is None else weights
    f = ClusterObjective(packet, weights, t_ref, cfg.window, cfg.cost)
    g = velocity_grid(cfg)
    return np.array([[f(vx, vy) for vx in g] for vy in g])


class NotEnoughPeaks(UserWarning):
    pass


def initialize(packet, n_clusters, seed=0, cfg=MeConfig()):
    """Start state: velocities at the strongest separated peaks of the grid.

    Local maxima of the single-cluster objective (all weights one) are taken
    greedily by value, suppressing anything within one grid cell of a chosen
    peak. Exact ties are ordered by a seeded random key. If fewer peaks than
    clusters exist, the rest are drawn at random from the grid with a
    :class:`NotEnoughPeaks` warning. ``P`` starts uniform and ``C`` at one.
    """
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    if len(packet) == 0:
        raise EmptyPacket("cannot initialise on an empty packet")
    rng = np.random.default_rng(seed)
    t_ref = default_t_ref(packet, cfg)
    values = grid_values(packet, cfg, t_ref=t_ref)
    g = velocity_grid(cfg)
    n = len(g)
    padded = np.pad(values, 1, constant_values=-np.inf)
    neighbours = np.stack(
        [padded[1 + dy : 1 + dy + n, 1 + dx : 1 + dx + n] for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx]
    )
    is_peak = values >= neighbours.max(axis=0)
    iy, ix = np.nonzero(is_peak)
    tie_key = rng.random(len(iy))
    order = np.lexsort((tie_key, -values[iy, ix]))
    chosen = []
    for k in order:
        cy, cx = iy[k], ix[k]
        if all(max(abs(cy - py), abs(cx - px)) > 1 for py, px in chosen):
            chosen.append((cy, cx))
        if len(chosen) == n_clusters:
            break
    if len(chosen) < n_clusters:
        import warnings

        warnings.warn(
            f"only {len(chosen)} grid peaks for {n_clusters} clusters; drawing the rest at random",
            NotEnoughPeaks,
            stacklevel=2,
        )
        free = [(a, b) for a in range(n) for b in range(n) if (a, b) not in chosen]
        picks = rng.choice(len(free), size=min(n_clusters - len(chosen), len(free)), replace=False)
        chosen.extend(free[i] for i in picks)
        while len(chosen) < n_clusters:  # grid smaller than the cluster count
            chosen.append(chosen[int(rng.integers(len(chosen)))])
    thetas = [WarpParams(g[cx], g[cy]) for cy, cx in chosen]
    n_events = len(packet)
    return SegmentationState(
        thetas=thetas,
        P=np.full((n_events, n_clusters), 1.0 / n_clusters),
        C=np.ones((n_events, n_clusters)),
        t_ref=t_ref,
    )


def cluster_weights(state, j):
    return state.P[:, j] * state.C[:, j]


def cluster_objective(packet, state, j, cfg):
    return ClusterObjective(packet, cluster_weights(state, j), state.t_ref, cfg.window, cfg.cost)


def optimize_theta(packet, state, j, cfg=MeConfig(), callback=None):
    """Refit cluster ``j``'s velocity by gradient ascent; never lowers its objective."""
    weights = cluster_weights(state, j)
    theta = state.thetas[j]
    if not np.any(weights):
        return theta
    f = ClusterObjective(packet, weights, state.t_ref, cfg.window, cfg.cost)
    cb = None if callback is None else (lambda info: callback({**info, "cluster": j}))
    (vx, vy), _ = gradient_ascent(f, (theta.vx, theta.vy), cfg, cb)
    return WarpParams(vx, vy)


def cluster_images(packet, state, cfg=MeConfig()):
    """Weighted image of warped events for every cluster."""
    return [
        kernels.splat_warped(
            packet.xf, packet.yf, packet.t, cluster_weights(state, j),
            th.vx, th.vy, state.t_ref, packet.width, packet.height,
        )
        for j, th in enumerate(state.thetas)
    ]


def choose_window(packet, cfg=MeConfig(), seed=0, candidates=CANDIDATE_WINDOWS):
    """Variance window picked on the image warped by the strongest grid velocity."""
    state = initialize(packet, 1, seed, cfg)
    return select_window(cluster_images(packet, state, cfg)[0], candidates)


def update_probabilities(packet, state, cfg=MeConfig()):
    """Soft assignment from each cluster's image at the event's warped position."""
    support = np.empty_like(state.P)
    for j, (th, img) in enumerate(zip(state.thetas, cluster_images(packet, state, cfg))):
        support[:, j] = kernels.sample_warped(img, packet.xf, packet.yf, packet.t, th.vx, th.vy, state.t_ref)
    np.maximum(support, 0.0, out=support)
    total = support.sum(axis=1, keepdims=True)
    flat = total[:, 0] < ROW_EPS
    P = np.divide(support, total, out=np.zeros_like(support), where=~flat[:, None])
    P[flat] = 1.0 / state.n_clusters
    return P


def cluster_sharpness(packet, state, cfg=MeConfig()):
    return np.array(
        [cluster_objective(packet, state, j, cfg)(th.vx, th.vy) for j, th in enumerate(state.thetas)]
    )


def total_sharpness(packet, state, cfg=MeConfig()):
    return float(cluster_sharpness(packet, state, cfg).sum())


def run_me(packet, state, cfg=MeConfig(), callback: Optional[Callable] = None):
    """Alternate velocity fits and probability updates with ``C`` held fixed.

    Stops after ``cfg.em_iters`` alternations or when the total objective
    gains less than ``cfg.tol`` (relative). Returns the best state visited,
    so the total objective never decreases relative to the input.
    """
    best_sharp = cluster_sharpness(packet, state, cfg)
    best = state.replace(sharpness=best_sharp)
    best_total = prev_total = float(best_sharp.sum())
    current = state
    for alternation in range(cfg.em_iters):
        thetas = [optimize_theta(packet, current, j, cfg, callback) for j in range(current.n_clusters)]
        current = current.replace(thetas=thetas)
        current = current.replace(P=update_probabilities(packet, current, cfg))
        sharp = cluster_sharpness(packet, current, cfg)
        total = float(sharp.sum())
        current = current.replace(sharpness=sharp)
        if callback is not None:
            callback({"stage": "em", "alternation": alternation, "total_sharpness": total,
                      "thetas": [tuple(t) for t in thetas]})
        log.debug("ME alternation %d: total objective %.6g", alternation, total)
        if total >= best_total:
            best, best_total = current, total
        gain = (total - prev_total) / abs(prev_total) if prev_total != 0 else (math.inf if total > 0 else 0.0)
        prev_total = total
        if gain < cfg.tol:
            break
    return best
