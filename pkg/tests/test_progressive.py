import numpy as np
import pytest

from progseg import synth
from progseg.events import NOISE, EventPacket
from progseg.metrics import iou_report
from progseg.motion import MeConfig, SegmentationState, initialize, run_me
from progseg.progressive import (
    LoopConfig,
    TraceEntry,
    hard_labels,
    run,
    run_batched,
    run_filtered,
    save_confidences,
    save_trace,
)
from progseg.warp import WarpParams


def scene(noise, seed=3):
    spec = synth.SceneSpec(
        width=140, height=90, duration=0.4, noise=noise, seed=seed,
        objects=[
            dict(size=(30, 26), position=(15, 12), velocity=(40, 10), texture="blobs", block=6, levels=(0.6, 1.2)),
            dict(size=(30, 26), position=(90, 50), velocity=(-35, -15), texture="blobs", block=6, levels=(0.6, 1.2)),
        ],
    )
    return synth.generate_scene(spec)


@pytest.fixture(scope="module")
def noisy():
    return scene(0.25)


@pytest.fixture(scope="module")
def clean():
    return scene(0.0)


def test_loop_config_validation():
    with pytest.raises(ValueError):
        LoopConfig(iterations=-1)
    with pytest.raises(ValueError):
        LoopConfig(noise_threshold=1.5)


def test_hard_label_rules():
    P = np.array([[0.9, 0.1], [0.5, 0.5], [0.2, 0.8]])
    C = np.array([[1.0, 1.0], [1.0, 1.0], [0.3, 0.4]])
    state = SegmentationState([WarpParams(), WarpParams()], P, C, 0.0)
    assert hard_labels(state, 0.5).tolist() == [1, 1, NOISE]
    assert hard_labels(state, 0.0).tolist() == [1, 1, 2]


def test_zero_iterations_equals_plain_me(noisy):
    pk = noisy.packet
    res = run(pk, 2, loop_cfg=LoopConfig(iterations=0), seed=0)
    st_ = run_me(pk, initialize(pk, 2, seed=0))
    assert np.array_equal(res.labels, np.argmax(st_.P, axis=1) + 1)
    assert len(res.trace) == 1 and np.isnan(res.trace[0].max_dC)


def test_trace_shape_and_early_stop(noisy):
    res = run(noisy.packet, 2, loop_cfg=LoopConfig(iterations=7))
    assert 1 <= len(res.trace) <= 8
    assert [e.iteration for e in res.trace] == list(range(len(res.trace)))
    if len(res.trace) < 8:
        assert res.trace[-1].max_dC < 1e-3


def test_noiseless_first_pass_close_to_final(clean):
    pk = clean.packet
    start = initialize(pk, 2, seed=0)
    one = run(pk, 2, loop_cfg=LoopConfig(iterations=1), state=start)
    full = run(pk, 2, loop_cfg=LoopConfig(iterations=7), state=start)
    assert len(full.trace) < 8 and full.trace[-1].max_dC < 1e-3
    a = iou_report(one.labels, clean.labels).miou
    b = iou_report(full.labels, clean.labels).miou
    assert abs(a - b) <= 0.01


def test_progressive_beats_me_only(noisy):
    pk = noisy.packet
    start = initialize(pk, 2, seed=0)
    me = run(pk, 2, loop_cfg=LoopConfig(iterations=0), state=start)
    pr = run(pk, 2, loop_cfg=LoopConfig(iterations=7), state=start)
    assert iou_report(pr.labels, noisy.labels).miou > iou_report(me.labels, noisy.labels).miou


def test_miou_nondecreasing_in_iterations(noisy):
    pk = noisy.packet
    start = initialize(pk, 2, seed=0)
    scores = [100 * iou_report(run(pk, 2, loop_cfg=LoopConfig(iterations=k), state=start).labels, noisy.labels).miou
              for k in range(4)]
    assert all(b >= a - 1.0 for a, b in zip(scores, scores[1:]))


def test_determinism(noisy):
    a = run(noisy.packet, 2, seed=4)
    b = run(noisy.packet, 2, seed=4)
    assert np.array_equal(a.labels, b.labels)
    assert [e[:3] for e in a.trace] == [e[:3] for e in b.trace]


def test_label_permutation(noisy):
    pk = noisy.packet
    res = run(pk, 2, loop_cfg=LoopConfig(iterations=1))
    swapped = res.state.permuted([1, 0])
    labels = hard_labels(swapped)
    mapped = np.where(res.labels == NOISE, NOISE, 3 - res.labels)
    assert np.array_equal(labels, mapped)


def test_degenerate_keeps_me_result():
    # opposite polarities at the same pixel and instant cancel under every velocity
    pk = EventPacket.from_arrays([3, 3], [2, 2], [0.1, 0.1], [1, -1], 8, 6, t0=0.0, t1=0.5)
    res = run(pk, 1, me_cfg=MeConfig(grid_size=3, grid_range=5))
    assert res.degenerate
    assert len(res.trace) == 1
    assert NOISE not in res.labels


def test_callback_loop_stage(noisy):
    seen = []
    run(noisy.packet, 2, loop_cfg=LoopConfig(iterations=1), callback=seen.append)
    assert any(s["stage"] == "loop" for s in seen)


def test_run_filtered(noisy):
    labels, keep = run_filtered(noisy.packet, 2)
    assert len(labels) == len(noisy.packet)
    assert np.all(labels[~keep] == NOISE)
    assert np.mean(keep[noisy.noise_mask]) < np.mean(keep[~noisy.noise_mask])


def test_output_files(tmp_path):
    trace = [TraceEntry(0, 1.5, 1.0, float("nan")), TraceEntry(1, 2.0, 0.4, 0.25)]
    save_trace(trace, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text() == (
        "iter,total_sharpness,mean_confidence,max_dC\n0,1.5,1.0,nan\n1,2.0,0.4,0.25\n"
    )
    save_confidences(np.array([[0.5, 0.25]]), tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text() == "event,cluster,value\n0,1,0.5\n0,2,0.25\n"


def test_run_batched(noisy):
    pk, gt = noisy.packet, noisy.labels
    single = run_batched(pk, 2, len(pk) + 1, loop_cfg=LoopConfig(iterations=1))
    whole = run(pk, 2, loop_cfg=LoopConfig(iterations=1))
    np.testing.assert_array_equal(single.labels, whole.labels)
    size = len(pk) // 3 + 1
    res = run_batched(pk, 2, size, loop_cfg=LoopConfig(iterations=1))
    assert res.labels.shape == gt.shape and res.state.C.shape == (len(pk), 2)
    assert np.allclose(res.state.P.sum(axis=1), 1.0)
    assert sum(e.iteration == 0 for e in res.trace) == 3
    assert iou_report(res.labels, gt).miou > 0.7
    with pytest.raises(ValueError):
        run_batched(pk, 2, 0)
