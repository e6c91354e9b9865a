"""The outer loop: motion estimation and denoising feeding each other.

Iteration 0 is motion estimation alone (all confidences one). Every further
iteration recomputes the confidences from the current velocities and then
re-runs motion estimation on the re-weighted events, warm-starting from the
previous velocities and probabilities. The loop stops after
``LoopConfig.iterations`` iterations or once the confidences stop moving.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from typing import NamedTuple, Optional

import numpy as np

from progseg.denoise import EdConfig, baseline_st_filter, run_ed
from progseg.events import NOISE, batches
from progseg.motion import MeConfig, SegmentationState, default_t_ref, initialize, run_me

log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class LoopConfig:
    iterations: int = 7
    tol: float = 1e-3
    noise_threshold: float = 0.5

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 <= self.noise_threshold <= 1.0:
            raise ValueError("noise_threshold must lie in [0, 1]")


class TraceEntry(NamedTuple):
    iteration: int
    total_sharpness: float
    mean_confidence: float
    max_dC: float


@dataclasses.dataclass(frozen=True, eq=False)
class SegmentationResult:
    state: SegmentationState
    labels: np.ndarray
    trace: list
    degenerate: bool = False

    @property
    def thetas(self):
        return self.state.thetas

    def confidence_scores(self):
        """Per-event ``max_j C[:, j]``."""
        return self.state.C.max(axis=1)


def hard_labels(state, noise_threshold=0.5):
    """``NOISE`` where every confidence is below the threshold, else 1 + argmax of P."""
    labels = np.argmax(state.P, axis=1).astype(np.int64) + 1
    labels[state.C.max(axis=1) < noise_threshold] = NOISE
    return labels


def _entry(iteration, state, max_dc):
    return TraceEntry(iteration, float(np.sum(state.sharpness)), float(state.C.mean()), float(max_dc))


def run(packet, n_clusters, me_cfg=MeConfig(), ed_cfg=EdConfig(), loop_cfg=LoopConfig(), seed=0,
        callback=None, state: Optional[SegmentationState] = None):
    """Segment ``packet`` into ``n_clusters`` motions while down-weighting noise.

    ``state`` overrides the grid initialisation (used when sweeping options
    from a common start). The trace has one entry per executed iteration,
    iteration 0 included.
    """
    if state is None:
        state = initialize(packet, n_clusters, seed, me_cfg)
    state = run_me(packet, state, me_cfg, callback)
    trace = [_entry(0, state, float("nan"))]
    degenerate = False
    for it in range(1, loop_cfg.iterations + 1):
        denoised = run_ed(packet, state, ed_cfg)
        if denoised.degenerate:
            log.warning("iteration %d: degenerate correlation, keeping the previous result", it)
            degenerate = True
            break
        max_dc = float(np.max(np.abs(denoised.C - state.C))) if len(packet) else 0.0
        state = run_me(packet, denoised, me_cfg, callback)
        trace.append(_entry(it, state, max_dc))
        if callback is not None:
            callback({"stage": "loop", **trace[-1]._asdict()})
        log.debug("iteration %d: %s", it, trace[-1])
        if max_dc < loop_cfg.tol:
            break
    labels = hard_labels(state, loop_cfg.noise_threshold)
    return SegmentationResult(state, labels, trace, degenerate)


def run_batched(packet, n_clusters, batch_size, me_cfg=MeConfig(), ed_cfg=EdConfig(), loop_cfg=LoopConfig(),
                seed=0):
    """:func:`run` over consecutive batches of at most ``batch_size`` events.

    Each batch after the first starts from the previous batch's velocities
    with ``P`` uniform and ``C`` at one. Per-event arrays are concatenated;
    the returned velocities and ``t_ref`` are the last batch's, and the trace
    lists every batch's entries in order.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(packet) <= batch_size:
        return run(packet, n_clusters, me_cfg, ed_cfg, loop_cfg, seed)
    results, thetas = [], None
    for chunk in batches(packet, batch_size):
        start = None
        if thetas is not None:
            start = SegmentationState(
                thetas=thetas,
                P=np.full((len(chunk), n_clusters), 1.0 / n_clusters),
                C=np.ones((len(chunk), n_clusters)),
                t_ref=default_t_ref(chunk, me_cfg),
            )
        res = run(chunk, n_clusters, me_cfg, ed_cfg, loop_cfg, seed, state=start)
        results.append(res)
        thetas = res.thetas
    last = results[-1].state
    state = last.replace(
        P=np.concatenate([r.state.P for r in results]),
        C=np.concatenate([r.state.C for r in results]),
        sharpness=None,
    )
    return SegmentationResult(
        state,
        np.concatenate([r.labels for r in results]),
        [e for r in results for e in r.trace],
        any(r.degenerate for r in results),
    )


def run_filtered(packet, n_clusters, radius=1, dt=0.01, me_cfg=MeConfig(), seed=0):
    """Baseline: spatiotemporal filter first, then motion estimation alone.

    Dropped events are labelled ``NOISE`` in the returned label array.
    """
    keep = baseline_st_filter(packet, radius, dt)
    labels = np.full(len(packet), NOISE, dtype=np.int64)
    if keep.sum() == 0:
        return labels, keep
    kept = packet.select(keep)
    result = run(kept, n_clusters, me_cfg, loop_cfg=LoopConfig(iterations=0), seed=seed)
    labels[keep] = result.labels
    return labels, keep


def save_trace(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "total_sharpness", "mean_confidence", "max_dC"])
        for e in trace:
            w.writerow([e.iteration, repr(float(e.total_sharpness)), repr(float(e.mean_confidence)), repr(float(e.max_dC))])


def save_confidences(C, path):
    """Long-format CSV ``event,cluster,value`` (clusters numbered from 1)."""
    n, k = C.shape
    with open(path, "w", newline="") as fh:
        fh.write("event,cluster,value\n")
        for i, row in enumerate(np.asarray(C, dtype=np.float64).tolist()):
            fh.writelines(f"{i},{j},{v!r}\n" for j, v in enumerate(row, start=1))
