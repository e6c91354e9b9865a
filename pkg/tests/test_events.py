import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from progseg.errors import EmptyFile, InvalidInterval, LengthMismatch, MalformedRecord, OutOfBounds
from progseg.events import (
    HEADER,
    NOISE,
    Event,
    EventPacket,
    LabeledEvents,
    batches,
    concatenate,
    load_events,
    load_labels,
    save_events,
    save_labels,
    slice_packet,
)

from conftest import random_packet


def write(path, text):
    path.write_text(text)
    return path


def test_csv_single_record(tmp_path):
    f = write(tmp_path / "e.csv", "# width=240 height=180\nt,x,y,p\n0.001,3,4,1\n")
    pk = load_events(f)
    assert (pk.width, pk.height, len(pk)) == (240, 180, 1)
    assert pk[0] == Event(3, 4, 0.001, 1)


def test_csv_unsorted_records_are_sorted(tmp_path):
    f = write(tmp_path / "e.csv", "# width=10 height=10\nt,x,y,p\n0.002,1,1,1\n0.001,2,2,-1\n")
    pk = load_events(f)
    assert list(pk.t) == [0.001, 0.002]
    assert list(pk.x) == [2, 1]


def test_csv_stable_sort_on_ties(tmp_path):
    f = write(tmp_path / "e.csv", "# width=10 height=10\nt,x,y,p\n0.5,1,0,1\n0.1,9,9,1\n0.5,2,0,1\n0.5,3,0,-1\n")
    assert list(load_events(f).x) == [9, 1, 2, 3]


def test_out_of_bounds_column(tmp_path):
    f = write(tmp_path / "e.csv", "# width=240 height=180\nt,x,y,p\n0.001,240,4,1\n")
    with pytest.raises(OutOfBounds):
        load_events(f)


def test_zero_polarity_is_malformed(tmp_path):
    f = write(tmp_path / "e.csv", "# width=10 height=10\nt,x,y,p\n0.001,1,1,0\n")
    with pytest.raises(MalformedRecord) as info:
        load_events(f)
    assert info.value.offset is not None


def test_malformed_line_number(tmp_path):
    f = write(tmp_path / "e.csv", "# width=10 height=10\nt,x,y,p\n0.1,1,1,1\nabc,1,1,1\n")
    with pytest.raises(MalformedRecord, match="line 4"):
        load_events(f)


def test_csv_geometry_from_flags(tmp_path):
    f = write(tmp_path / "e.csv", "t,x,y,p\n0.1,1,1,1\n")
    assert load_events(f, width=5, height=4).width == 5


def test_empty_file(tmp_path):
    f = write(tmp_path / "e.csv", "")
    with pytest.raises(EmptyFile):
        load_events(f)


def test_binary_truncated_reports_offset(tmp_path):
    pk = random_packet(5)
    f = tmp_path / "e.bin"
    save_events(pk, f, "binary")
    data = f.read_bytes()
    f.write_bytes(data[:-3])
    with pytest.raises(MalformedRecord):
        load_events(f)


def test_binary_bad_magic(tmp_path):
    f = tmp_path / "e.bin"
    f.write_bytes(struct.pack("<4sHHQ", b"NOPE", 4, 4, 0))
    with pytest.raises(MalformedRecord):
        load_events(f)


def test_empty_packet_files(tmp_path):
    pk = EventPacket.from_arrays([], [], [], [], 8, 6)
    save_events(pk, tmp_path / "e.csv", "csv")
    save_events(pk, tmp_path / "e.bin", "binary")
    assert (tmp_path / "e.csv").read_text() == "# width=8 height=6\nt,x,y,p\n"
    assert (tmp_path / "e.bin").stat().st_size == HEADER.size == 16
    assert len(load_events(tmp_path / "e.bin")) == 0
    assert len(load_events(tmp_path / "e.csv")) == 0


def test_binary_round_trip_bit_identical(tmp_path):
    pk = random_packet(1000, seed=3)
    f = tmp_path / "e.bin"
    save_events(pk, f)
    back = load_events(f)
    assert back.t.tobytes() == pk.t.tobytes()
    assert np.array_equal(back.x, pk.x) and np.array_equal(back.p, pk.p)


def test_csv_and_binary_reload_agree(tmp_path):
    pk = random_packet(300, seed=4)
    save_events(pk, tmp_path / "e.csv")
    save_events(pk, tmp_path / "e.bin")
    a = load_events(tmp_path / "e.csv")
    b = load_events(tmp_path / "e.bin")
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y) and np.array_equal(a.p, b.p)
    np.testing.assert_allclose(a.t, b.t, atol=5e-10)


def test_packet_invariants():
    with pytest.raises(ValueError):
        EventPacket([0, 1], [0, 0], [0.2, 0.1], [1, 1], 4, 4, 0.0, 1.0)
    with pytest.raises(OutOfBounds):
        EventPacket([4], [0], [0.1], [1], 4, 4, 0.0, 1.0)
    with pytest.raises(LengthMismatch):
        EventPacket([0, 1], [0], [0.1], [1], 4, 4, 0.0, 1.0)
    with pytest.raises(InvalidInterval):
        EventPacket([0], [0], [2.0], [1], 4, 4, 0.0, 1.0)


def test_packet_is_read_only():
    pk = random_packet(10)
    with pytest.raises(ValueError):
        pk.t[0] = 5.0


def test_single_timestamp_span_widened():
    pk = EventPacket.from_arrays([1, 2], [1, 1], [0.3, 0.3], [1, -1], 4, 4)
    assert pk.t1 > pk.t0 == 0.3


def test_slice_examples():
    pk = EventPacket.from_arrays([0, 1, 2], [0, 0, 0], [0.1, 0.2, 0.3], [1, 1, 1], 4, 4)
    s = slice_packet(pk, 0.15, 0.25)
    assert list(s.t) == [0.2] and (s.t0, s.t1) == (0.15, 0.25)
    empty = slice_packet(pk, 0.21, 0.22)
    assert len(empty) == 0 and (empty.t0, empty.t1) == (0.21, 0.22)
    full = slice_packet(pk, pk.t0, pk.t1 + 1e-9)
    assert list(full) == list(pk)
    with pytest.raises(InvalidInterval):
        slice_packet(pk, 0.3, 0.3)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(0, 200), seed=st.integers(0, 10_000), frac=st.floats(0.0, 1.0))
def test_slice_partition(n, seed, frac):
    pk = random_packet(n, seed=seed)
    m = pk.t0 + frac * (pk.t1 - pk.t0)
    a = slice_packet(pk, pk.t0, m) if m > pk.t0 else None
    b = slice_packet(pk, m, pk.t1 + 1e-9)
    events = (list(a) if a is not None else []) + list(b)
    assert events == list(pk)
    assert np.all(np.diff(b.t) >= 0)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 300), seed=st.integers(0, 10_000))
def test_binary_round_trip_property(tmp_path_factory, n, seed):
    pk = random_packet(n, seed=seed)
    f = tmp_path_factory.mktemp("rt") / "e.bin"
    save_events(pk, f)
    back = load_events(f)
    assert list(back) == list(pk)


def test_concatenate_and_batches():
    pk = random_packet(25, seed=2)
    parts = list(batches(pk, 10))
    assert [len(p) for p in parts] == [10, 10, 5]
    joined = parts[0]
    for p in parts[1:]:
        joined = concatenate(joined, p)
    assert list(joined) == list(pk)


def test_labeled_events_and_sidecar(tmp_path):
    pk = random_packet(4)
    le = LabeledEvents(pk, [1, NOISE, 2, 1])
    assert le.object_ids == [1, 2]
    assert list(le.noise_mask) == [False, True, False, False]
    save_labels(le.labels, tmp_path / "l.txt")
    assert (tmp_path / "l.txt").read_text() == "1\n-1\n2\n1\n"
    assert list(load_labels(tmp_path / "l.txt")) == [1, -1, 2, 1]
    with pytest.raises(LengthMismatch):
        LabeledEvents(pk, [1, 2])
    with pytest.raises(ValueError):
        LabeledEvents(pk, [0, 1, 1, 1])


def test_label_sidecar_rejects_zero(tmp_path):
    (tmp_path / "l.txt").write_text("1\n0\n")
    with pytest.raises(MalformedRecord, match="line 2"):
        load_labels(tmp_path / "l.txt")
