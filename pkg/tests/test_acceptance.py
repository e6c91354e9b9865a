"""Acceptance criteria 1-8, one test each.

Every test records a PASS/FAIL line that the terminal summary prints at the
end of the run. The suite-level numbers (criteria 1-3 and 5) come from one
shared pass over the 20-sequence standard suite.
"""

import collections
import dataclasses
import itertools
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, random_packet
from test_denoise import ec_oracle
from progseg import cli, metrics, synth
from progseg.denoise import baseline_st_filter, compute_lambda, event_correlation, map_confidence
from progseg.events import EventPacket, save_events
from progseg.motion import (
    ClusterObjective,
    MeConfig,
    SegmentationState,
    fd_gradient,
    initialize,
    optimize_theta,
    update_probabilities,
)
from progseg.progressive import LoopConfig, run
from progseg.sharpness import weighted_variance_mean
from progseg.warp import WarpParams, accumulate_weighted

pytestmark = pytest.mark.slow

LEVELS = synth.NOISE_LEVELS
CLUSTERS = 3
COSTS = ("variance", "gradient", "hessian")


def record(criterion, passed, detail):
    ACCEPTANCE.append((criterion, bool(passed), detail))
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
    return passed


@pytest.fixture(scope="module")
def suite_runs():
    t0 = time.perf_counter()
    cfg = MeConfig()
    miou = collections.defaultdict(lambda: collections.defaultdict(list))
    separation = collections.defaultdict(list)
    auc = collections.defaultdict(list)
    for name, labeled in synth.standard_suite(0):
        n = float(name.split("_n")[1])
        pk, gt = labeled.packet, labeled.labels
        start = initialize(pk, CLUSTERS, 0, cfg)
        for method, iters in (("me_only", 0), ("progressive", 7)):
            res = run(pk, CLUSTERS, cfg, loop_cfg=LoopConfig(iterations=iters), state=start)
            miou[method][n].append(100 * metrics.iou_report(res.labels, gt).miou)
        if n <= 0.15:
            first = run(pk, CLUSTERS, cfg, loop_cfg=LoopConfig(iterations=1), state=start)
            scores = first.confidence_scores()
            noise = gt == synth.NOISE
            separation[n].append(scores[~noise].mean() - scores[noise].mean())
            auc[n].append(metrics.roc_auc(scores, noise))
        if n == 0.25:
            for cost in COSTS:
                c = dataclasses.replace(cfg, cost=cost)
                res = run(pk, CLUSTERS, c, loop_cfg=LoopConfig(iterations=7), seed=0)
                miou[cost][n].append(100 * metrics.iou_report(res.labels, gt).miou)
    seconds = time.perf_counter() - t0
    table = {m: {n: float(np.mean(v)) for n, v in d.items()} for m, d in miou.items()}
    return table, separation, auc, seconds


def test_criterion_1_progressive_beats_me_only(suite_runs):
    table, _, _, seconds = suite_runs
    prog, me = table["progressive"], table["me_only"]
    every = all(prog[n] >= me[n] for n in LEVELS)
    gap = prog[0.25] - me[0.25]
    rows = " ".join(f"n={n:.2f}:{prog[n]:.2f}/{me[n]:.2f}" for n in LEVELS)
    ok = record(1, every and gap >= 5.0 and seconds <= 600.0,
                f"progressive/me_only {rows}; gap at 0.25 = {gap:.2f}; suite time {seconds:.0f} s")
    assert ok


def test_criterion_2_monotone_degradation(suite_runs):
    prog = suite_runs[0]["progressive"]
    ok = record(2, prog[0.05] >= prog[0.25], f"MIoU n=0.05 {prog[0.05]:.3f} vs n=0.25 {prog[0.25]:.3f}")
    assert ok


def test_criterion_3_cost_ablation(suite_runs):
    table = suite_runs[0]
    # the progressive arm already runs the default objective from the seed-0 grid init
    ours = table["progressive"][0.25]
    others = {c: table[c][0.25] for c in COSTS}
    ok = record(3, all(ours >= v - 2.0 for v in others.values()),
                f"n=0.25 sharpness {ours:.2f}; " + ", ".join(f"{c} {v:.2f}" for c, v in others.items()))
    assert ok


def test_criterion_4_velocity_recovery():
    t0 = time.perf_counter()
    spec = synth.SceneSpec(
        width=120, height=60, duration=1.0,
        objects=[dict(size=(8, 24), position=(20, 18), velocity=(40.0, 0.0), texture="flat", levels=(0.7, 0.7))],
    )
    pk = synth.render_signal(spec).packet
    state = SegmentationState([WarpParams(35.0, 5.0)], np.ones((len(pk), 1)), np.ones((len(pk), 1)), pk.t0)
    th = optimize_theta(pk, state, 0, MeConfig())
    seconds = time.perf_counter() - t0
    f = ClusterObjective(pk, np.ones(len(pk)), pk.t0)
    grid = np.round(np.arange(-2.0, 2.0001, 0.1), 10)
    grid_max = max(f(40.0 + a, b) for a, b in itertools.product(grid, grid))
    err = max(abs(th.vx - 40.0), abs(th.vy))
    ratio = f(th.vx, th.vy) / grid_max
    ok = record(4, err <= 0.5 and ratio >= 0.99 and len(pk) <= 2000 and seconds <= 10.0,
                f"theta ({th.vx:.3f}, {th.vy:.3f}), error {err:.3f} px/s, sharpness/grid max {ratio:.4f}, "
                f"{len(pk)} events, {seconds:.2f} s")
    assert ok


def test_criterion_5_denoising_separation(suite_runs):
    _, separation, auc, _ = suite_runs
    gaps = {n: float(np.mean(separation[n])) for n in (0.05, 0.10, 0.15)}
    worst = min(min(v) for v in separation.values())
    auc15 = float(np.mean(auc[0.15]))
    ok = record(5, all(g >= 0.2 for g in gaps.values()) and auc15 >= 0.9,
                "confidence gap " + ", ".join(f"n={n:.2f}:{g:.3f}" for n, g in gaps.items())
                + f" (worst sequence {worst:.3f}); AUC n=0.15 {auc15:.4f}")
    assert ok


def test_criterion_6_exact_formulas():
    checks = {}
    pk = random_packet(300, seed=3)
    n = len(pk)
    P = np.random.default_rng(0).dirichlet(np.ones(3), n)
    state = SegmentationState([WarpParams(4, 1), WarpParams(-3, 2), WarpParams(0, -5)], P, np.ones((n, 3)), pk.t0)
    rows = update_probabilities(pk, state).sum(axis=1)
    checks["P rows"] = np.abs(rows - 1).max() <= 1e-9
    ec = event_correlation(pk, state)
    lam = compute_lambda(ec)
    checks["lambda*mean"] = abs(lam * ec.mean() - 1.0) <= 1e-12
    checks["tanh(1)"] = round(float(map_confidence(np.array([ec.mean()]), lam)[0]), 6) == 0.761594
    gt = np.array([1, 1, 1, 1, 2, 2, 2, -1, -1, 1])
    pred = np.array([5, 5, 5, 7, 7, 7, -1, 5, -1, -1])
    rep = metrics.iou_report(pred, gt)
    checks["IoU 10 events"] = rep.per_object == {1: 3 / 6, 2: 2 / 4}
    checks["two-pixel toy"] = weighted_variance_mean(np.array([1.0, 3.0]), np.array([1.0, -3.0])).value == 2.5
    ok = record(6, all(checks.values()), ", ".join(f"{k} {'ok' if v else 'BAD'}" for k, v in checks.items()))
    assert ok


def test_criterion_7_oracle_equivalences():
    checks = {}
    pk = random_packet(50, width=20, height=16, seed=7)
    n = len(pk)
    thetas = [WarpParams(6.0, -2.0), WarpParams(-4.0, 3.0)]
    state = SegmentationState(thetas, np.full((n, 2), 0.5), np.ones((n, 2)), pk.t0)
    ec = event_correlation(pk, state)
    brute = ec_oracle(pk, state)
    checks["EC"] = np.abs(ec - brute).max() <= 1e-12

    pk = random_packet(500, width=40, height=30, seed=8, span=1.0)
    mask = baseline_st_filter(pk, 1, 0.01)
    dx = np.abs(pk.x[:, None] - pk.x[None, :])
    dy = np.abs(pk.y[:, None] - pk.y[None, :])
    dt = np.abs(pk.t[:, None] - pk.t[None, :])
    near = (np.maximum(dx, dy) <= 1) & (dt <= 0.01)
    np.fill_diagonal(near, False)
    checks["filter"] = np.array_equal(mask, near.any(axis=1))

    rng = np.random.default_rng(9)
    agree = True
    for _ in range(50):
        m = rng.uniform(size=(int(rng.integers(1, 5)), int(rng.integers(1, 5))))
        tot = lambda a: sum(m[r, c] for r, c in a.items())
        agree &= abs(tot(metrics.match_exhaustive(m)) - tot(metrics.match_hungarian(m))) <= 1e-12
    checks["matching"] = agree

    rng = np.random.default_rng(10)
    x = rng.integers(10, 90, 1000)
    y = rng.integers(10, 70, 1000)
    t = np.sort(rng.uniform(0, 0.1, 1000))
    pk = EventPacket.from_arrays(x, y, t, rng.choice((-1, 1), 1000), 100, 80, t0=0.0, t1=0.1)
    w = rng.uniform(0.1, 1.0, 1000)
    img = accumulate_weighted(pk, w, WarpParams(23.7, -41.3), 0.0)
    checks["mass"] = abs(img.sum() - w.sum()) <= 1e-9 * w.sum()
    ok = record(7, all(checks.values()), ", ".join(f"{k} {'ok' if v else 'BAD'}" for k, v in checks.items()))
    assert ok


def test_criterion_8_numerical_checks(tmp_path):
    checks = {}
    spec = synth.SceneSpec(
        width=140, height=90, duration=0.4, noise=0.15, seed=3,
        objects=[
            dict(size=(30, 26), position=(15, 12), velocity=(40, 10), texture="blobs", block=6, levels=(0.6, 1.2)),
            dict(size=(30, 26), position=(90, 50), velocity=(-35, -15), texture="blobs", block=6, levels=(0.6, 1.2)),
        ],
    )
    labeled = synth.generate_scene(spec)
    pk = labeled.packet

    f = ClusterObjective(pk, np.ones(len(pk)), pk.t0)
    rng = np.random.default_rng(0)
    h = 0.5
    consistent = True
    for vx, vy in rng.uniform(-60, 60, size=(20, 2)):
        g1 = np.array(fd_gradient(f, vx, vy, h))
        g2 = np.array(fd_gradient(f, vx, vy, h / 2))
        scale = max(np.abs(g1).max(), np.abs(g2).max(), 1e-12)
        consistent &= np.abs(g1 - g2).max() <= h * scale + 1e-9
    checks["Richardson"] = consistent

    ascents, current = [], None
    def watch(ev):
        nonlocal current
        if ev["stage"] == "ascent":
            if ev["iter"] == 0 or current is None:
                current = []
                ascents.append(current)
            current.append(ev["value"])
        else:
            current = None

    run(pk, 2, loop_cfg=LoopConfig(iterations=7), callback=watch)
    steps = sum(len(a) for a in ascents)
    checks["ascent monotone"] = steps > 0 and all(b >= a for seq in ascents for a, b in zip(seq, seq[1:]))

    path = tmp_path / "scene.csv"
    save_events(pk, path)
    outs = []
    for sub in ("a", "b"):
        assert cli.main(["segment", str(path), "--clusters", "2", "--seed", "4", "--out", str(tmp_path / sub)]) == 0
        outs.append((tmp_path / sub / "labels.txt").read_bytes())
    checks["deterministic"] = outs[0] == outs[1]
    ok = record(8, all(checks.values()),
                ", ".join(f"{k} {'ok' if v else 'BAD'}" for k, v in checks.items()) + f" ({steps} ascent steps)")
    assert ok
