"""Segmentation and denoising scores.

Per-object IoU follows ``TP / (TP + FP + FN)`` after an optimal one-to-one
matching of ground-truth objects to predicted clusters, so the score does
not depend on how clusters happen to be numbered. Events predicted as noise
belong to no cluster; ground-truth noise events inside a cluster are false
positives for whichever object that cluster is matched to.
"""

from __future__ import annotations

import dataclasses
import itertools
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from progseg.errors import LengthMismatch
from progseg.events import NOISE

EXHAUSTIVE_LIMIT = 6


@dataclasses.dataclass(frozen=True)
class IoUReport:
    per_object: dict  # object id -> IoU in [0, 1]
    matching: dict  # object id -> cluster id, or None when unmatched

    @property
    def miou(self):
        if not self.per_object:
            return 0.0
        return float(np.mean(list(self.per_object.values())))


def iou(tp, fp, fn):
    denom = tp + fp + fn
    return tp / denom if denom else 0.0


def iou_matrix(pred, gt):
    """IoU of every (object, cluster) pair plus the id lists."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"{len(pred)} predictions for {len(gt)} labels")
    objects = sorted(int(v) for v in np.unique(gt) if v != NOISE)
    clusters = sorted(int(v) for v in np.unique(pred) if v != NOISE)
    m = np.zeros((len(objects), len(clusters)))
    for a, o in enumerate(objects):
        in_obj = gt == o
        n_obj = in_obj.sum()
        for b, c in enumerate(clusters):
            in_clu = pred == c
            tp = np.sum(in_obj & in_clu)
            m[a, b] = iou(tp, in_clu.sum() - tp, n_obj - tp)
    return m, objects, clusters


def match_exhaustive(m):
    """Injective row->column assignment maximising the total; ``{row: col}``."""
    n_rows, n_cols = m.shape
    best, best_total = {}, -1.0
    if n_rows <= n_cols:
        for cols in itertools.permutations(range(n_cols), n_rows):
            total = sum(m[r, c] for r, c in enumerate(cols))
            if total > best_total + 1e-15:
                best, best_total = dict(enumerate(cols)), total
    else:
        for rows in itertools.permutations(range(n_rows), n_cols):
            total = sum(m[r, c] for c, r in enumerate(rows))
            if total > best_total + 1e-15:
                best, best_total = {r: c for c, r in enumerate(rows)}, total
    return best


def match_hungarian(m):
    rows, cols = linear_sum_assignment(m, maximize=True)
    return dict(zip(rows.tolist(), cols.tolist()))


def iou_report(pred, gt):
    m, objects, clusters = iou_matrix(pred, gt)
    if max(len(objects), len(clusters)) <= EXHAUSTIVE_LIMIT:
        assignment = match_exhaustive(m)
    else:
        assignment = match_hungarian(m)
    per_object, matching = {}, {}
    for a, o in enumerate(objects):
        b = assignment.get(a)
        matching[o] = None if b is None else clusters[b]
        per_object[o] = 0.0 if b is None else float(m[a, b])
    return IoUReport(per_object, matching)


def box_iou(a, b):
    """Axis-aligned boxes ``(x0, y0, x1, y1)``."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def oss_rate(pred_boxes, gt_boxes, threshold=0.5):
    """Object segmentation success rate in percent.

    Both arguments map ``(snapshot, object)`` keys to boxes; a ground-truth
    box with no prediction counts as a failure.
    """
    if not gt_boxes:
        return 0.0
    hits = sum(
        1 for key, gt in gt_boxes.items() if key in pred_boxes and box_iou(pred_boxes[key], gt) >= threshold
    )
    return 100.0 * hits / len(gt_boxes)


def label_boxes(packet, labels, theta_by_label=None, t_ref=None):
    """Bounding box of each label's events, optionally warped to ``t_ref``."""
    boxes = {}
    for lab in np.unique(labels):
        if lab == NOISE:
            continue
        sel = labels == lab
        x = packet.xf[sel]
        y = packet.yf[sel]
        if theta_by_label is not None and lab in theta_by_label:
            th = theta_by_label[lab]
            dt = packet.t[sel] - (packet.t0 if t_ref is None else t_ref)
            x = x - dt * th.vx
            y = y - dt * th.vy
        boxes[int(lab)] = (float(x.min()), float(y.min()), float(x.max()) + 1.0, float(y.max()) + 1.0)
    return boxes


class RocPoint(NamedTuple):
    threshold: float
    fpr: Optional[float]
    tpr: Optional[float]


def denoise_roc(scores, noise_mask, thresholds):
    """TPR over real events and FPR over noise events of ``score >= threshold``.

    An axis is ``None`` when its class has no events.
    """
    scores = np.asarray(scores, dtype=np.float64)
    noise_mask = np.asarray(noise_mask, dtype=bool)
    if scores.shape != noise_mask.shape:
        raise LengthMismatch("scores and mask differ in length")
    real = scores[~noise_mask]
    noise = scores[noise_mask]
    points = []
    for tau in thresholds:
        tpr = float(np.mean(real >= tau)) if len(real) else None
        fpr = float(np.mean(noise >= tau)) if len(noise) else None
        points.append(RocPoint(float(tau), fpr, tpr))
    return points


def roc_auc(scores, noise_mask):
    """Probability that a random real event outscores a random noise event (ties count half)."""
    scores = np.asarray(scores, dtype=np.float64)
    noise_mask = np.asarray(noise_mask, dtype=bool)
    n_real = int(np.sum(~noise_mask))
    n_noise = int(np.sum(noise_mask))
    if n_real == 0 or n_noise == 0:
        raise ValueError("AUC needs both real and noise events")
    ranks = rankdata(scores)
    return float((ranks[~noise_mask].sum() - n_real * (n_real + 1) / 2.0) / (n_real * n_noise))
