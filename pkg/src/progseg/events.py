"""Event data model and file I/O.

Events are held column-wise (one numpy array per field) inside an immutable
:class:`EventPacket`. Two on-disk formats are supported:

CSV
    optional comment ``# width=W height=H``, header ``t,x,y,p``, then one
    ``t,x,y,p`` record per line, ``t`` in seconds and ``p`` in {-1, 1}.
Binary (``.evs``)
    16-byte header: magic ``EVS1``, width (u16), height (u16), event count
    (u64), all little-endian; then 13-byte records ``t`` (f64), ``x`` (u16),
    ``y`` (u16), ``p`` (i8).

Ground-truth or predicted labels live in a sidecar text file with one integer
per line: ``-1`` for noise, otherwise an object/cluster id >= 1.
"""

from __future__ import annotations

import dataclasses
import math
import os
import re
import struct
from functools import cached_property
from typing import NamedTuple

import numpy as np

from progseg.errors import EmptyFile, InvalidInterval, LengthMismatch, MalformedRecord, OutOfBounds

NOISE = -1

MAGIC = b"EVS1"
HEADER = struct.Struct("<4sHHQ")
RECORD_DTYPE = np.dtype([("t", "<f8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])
assert RECORD_DTYPE.itemsize == 13

# timestamps written with this many decimals in CSV
CSV_DECIMALS = 9

# stand-in timespan when a loaded file has all events at one instant
MIN_TIMESPAN = 1e-6

_GEOMETRY_RE = re.compile(r"width\s*=\s*(\d+)\D+height\s*=\s*(\d+)")


class Event(NamedTuple):
    x: int
    y: int
    t: float
    b: int


@dataclasses.dataclass(frozen=True, eq=False)
class EventPacket:
    """A time-sorted batch of events with its sensor geometry.

    Use :meth:`from_arrays` to build one from unsorted data. The arrays are
    made read-only on construction.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    width: int
    height: int
    t0: float
    t1: float

    def __post_init__(self):
        cols = {}
        for name, dtype in (("x", np.int64), ("y", np.int64), ("t", np.float64), ("p", np.int8)):
            arr = np.array(getattr(self, name), dtype=dtype, copy=True).reshape(-1)
            arr.flags.writeable = False
            cols[name] = arr
            object.__setattr__(self, name, arr)
        n = len(cols["t"])
        if any(len(a) != n for a in cols.values()):
            raise LengthMismatch("event columns have different lengths")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "t1", float(self.t1))
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"bad geometry {self.width}x{self.height}")
        if n == 0:
            return
        x, y, t, p = cols["x"], cols["y"], cols["t"], cols["p"]
        if x.min() < 0 or x.max() >= self.width or y.min() < 0 or y.max() >= self.height:
            raise OutOfBounds(f"event coordinates exceed {self.width}x{self.height}")
        if not np.all(np.abs(p) == 1):
            raise ValueError("polarity must be -1 or +1")
        if not np.all(np.isfinite(t)) or np.any(np.diff(t) < 0):
            raise ValueError("timestamps must be finite and sorted")
        if t[0] < self.t0 or t[-1] > self.t1 or not self.t1 > self.t0:
            raise InvalidInterval(f"events outside [{self.t0}, {self.t1}]")

    @classmethod
    def from_arrays(cls, x, y, t, p, width, height, t0=None, t1=None):
        """Build a packet, stable-sorting by timestamp.

        ``t0``/``t1`` default to the first/last timestamp; a zero span is
        widened by one microsecond so the packet stays valid.
        """
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        order = np.argsort(t, kind="stable")
        t = t[order]
        if len(t):
            if t0 is None:
                t0 = float(t[0])
            if t1 is None:
                t1 = float(t[-1])
                if t1 <= t0:
                    t1 = t0 + MIN_TIMESPAN
        else:
            t0 = 0.0 if t0 is None else t0
            t1 = t0 if t1 is None else t1
        return cls(
            np.asarray(x).reshape(-1)[order],
            np.asarray(y).reshape(-1)[order],
            t,
            np.asarray(p).reshape(-1)[order],
            width,
            height,
            t0,
            t1,
        )

    @classmethod
    def from_events(cls, events, width, height, t0=None, t1=None):
        events = list(events)
        cols = [np.array([getattr(e, f) for e in events]) for f in ("x", "y", "t", "b")]
        return cls.from_arrays(*cols, width=width, height=height, t0=t0, t1=t1)

    def __len__(self):
        return len(self.t)

    def __getitem__(self, k):
        return Event(int(self.x[k]), int(self.y[k]), float(self.t[k]), int(self.p[k]))

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]

    def __eq__(self, other):
        if not isinstance(other, EventPacket):
            return NotImplemented
        return (
            (self.width, self.height, self.t0, self.t1) == (other.width, other.height, other.t0, other.t1)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.p, other.p)
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"EventPacket(n={len(self)}, {self.width}x{self.height}, "
            f"t=[{self.t0:.6g}, {self.t1:.6g}])"
        )

    @property
    def timespan(self):
        return self.t1 - self.t0

    # float64 copies consumed by the kernels
    @cached_property
    def xf(self):
        return self.x.astype(np.float64)

    @cached_property
    def yf(self):
        return self.y.astype(np.float64)

    @cached_property
    def pf(self):
        return self.p.astype(np.float64)

    def select(self, mask):
        """Sub-packet of the events where ``mask`` is true (same t0/t1)."""
        mask = np.asarray(mask)
        return EventPacket(
            self.x[mask], self.y[mask], self.t[mask], self.p[mask],
            self.width, self.height, self.t0, self.t1,
        )


@dataclasses.dataclass(frozen=True, eq=False)
class LabeledEvents:
    """A packet plus one ground-truth tag per event (``NOISE`` or id >= 1)."""

    packet: EventPacket
    labels: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if len(labels) != len(self.packet):
            raise LengthMismatch(f"{len(labels)} labels for {len(self.packet)} events")
        if np.any((labels < 1) & (labels != NOISE)):
            raise ValueError("labels must be NOISE (-1) or an id >= 1")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    @property
    def noise_mask(self):
        return self.labels == NOISE

    @property
    def object_ids(self):
        return sorted(int(v) for v in np.unique(self.labels) if v != NOISE)


def concatenate(first, second):
    """Join two packets with the same geometry, ``first`` preceding ``second`` in time."""
    if (first.width, first.height) != (second.width, second.height):
        raise ValueError("geometry differs")
    return EventPacket(
        np.concatenate([first.x, second.x]),
        np.concatenate([first.y, second.y]),
        np.concatenate([first.t, second.t]),
        np.concatenate([first.p, second.p]),
        first.width,
        first.height,
        min(first.t0, second.t0),
        max(first.t1, second.t1),
    )


def slice_packet(packet, a, b):
    """Events with ``a <= t < b``; the result spans exactly ``[a, b]``."""
    if not a < b:
        raise InvalidInterval(f"empty or reversed interval [{a}, {b})")
    lo = np.searchsorted(packet.t, a, side="left")
    hi = np.searchsorted(packet.t, b, side="left")
    sl = slice(lo, hi)
    return EventPacket(
        packet.x[sl], packet.y[sl], packet.t[sl], packet.p[sl],
        packet.width, packet.height, a, b,
    )


def batches(packet, size):
    """Split into consecutive packets of at most ``size`` events."""
    for start in range(0, len(packet), size):
        sl = slice(start, start + size)
        t = packet.t[sl]
        t1 = float(t[-1]) if t[-1] > t[0] else float(t[0]) + MIN_TIMESPAN
        yield EventPacket(
            packet.x[sl], packet.y[sl], t, packet.p[sl], packet.width, packet.height, float(t[0]), t1
        )


def infer_format(path):
    return "csv" if str(path).lower().endswith((".csv", ".txt")) else "binary"


def load_events(path, format=None, width=None, height=None):
    """Read an event file.

    Geometry comes from the file (binary header or CSV comment); ``width`` and
    ``height`` override it, and are required for CSV files without the
    comment. Unsorted records are stable-sorted by timestamp.
    """
    format = format or infer_format(path)
    if os.path.getsize(path) == 0:
        raise EmptyFile(f"{path} is empty")
    if format == "csv":
        return _load_csv(path, width, height)
    if format == "binary":
        return _load_binary(path, width, height)
    raise ValueError(f"unknown format {format!r}")


def _load_csv(path, width, height):
    xs, ys, ts, ps = [], [], [], []
    geometry = None
    seen_header = False
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = _GEOMETRY_RE.search(line)
                if m:
                    geometry = int(m.group(1)), int(m.group(2))
                continue
            if not seen_header and line.replace(" ", "") == "t,x,y,p":
                seen_header = True
                continue
            fields = line.split(",")
            if len(fields) != 4:
                raise MalformedRecord(f"expected 4 fields, got {len(fields)}", f"line {lineno}")
            try:
                t = float(fields[0])
                x = int(fields[1])
                y = int(fields[2])
                p = int(fields[3])
            except ValueError:
                raise MalformedRecord(f"unparseable record {line!r}", f"line {lineno}") from None
            if p not in (-1, 1):
                raise MalformedRecord(f"polarity must be -1 or 1, got {p}", f"line {lineno}")
            if not math.isfinite(t) or t < 0:
                raise MalformedRecord(f"bad timestamp {fields[0]!r}", f"line {lineno}")
            if x < 0 or y < 0:
                raise OutOfBounds(f"negative coordinate at line {lineno}")
            xs.append(x)
            ys.append(y)
            ts.append(t)
            ps.append(p)
    if width is None or height is None:
        if geometry is None:
            raise MalformedRecord("no geometry: pass width/height or add '# width=W height=H'")
        width = geometry[0] if width is None else width
        height = geometry[1] if height is None else height
    _check_bounds(xs, ys, width, height)
    return EventPacket.from_arrays(xs, ys, ts, ps, width, height)


def _check_bounds(xs, ys, width, height):
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    bad = np.nonzero((xs >= width) | (ys >= height))[0]
    if len(bad):
        k = int(bad[0])
        raise OutOfBounds(f"event {k} at ({xs[k]}, {ys[k]}) outside {width}x{height}")


def _load_binary(path, width, height):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < HEADER.size:
        raise MalformedRecord("truncated header", "byte 0")
    magic, w, h, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedRecord(f"bad magic {magic!r}", "byte 0")
    expected = HEADER.size + count * RECORD_DTYPE.itemsize
    if len(data) != expected:
        raise MalformedRecord(
            f"file holds {len(data)} bytes, header promises {expected}", f"byte {min(len(data), expected)}"
        )
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=HEADER.size)
    bad = np.nonzero((rec["p"] != 1) & (rec["p"] != -1))[0]
    if len(bad):
        k = int(bad[0])
        raise MalformedRecord(
            f"polarity {rec['p'][k]} in record {k}", f"byte {HEADER.size + k * RECORD_DTYPE.itemsize + 12}"
        )
    bad = np.nonzero(~np.isfinite(rec["t"]) | (rec["t"] < 0))[0]
    if len(bad):
        k = int(bad[0])
        raise MalformedRecord(f"bad timestamp in record {k}", f"byte {HEADER.size + k * RECORD_DTYPE.itemsize}")
    width = w if width is None else width
    height = h if height is None else height
    _check_bounds(rec["x"], rec["y"], width, height)
    return EventPacket.from_arrays(rec["x"], rec["y"], rec["t"], rec["p"], width, height)


def save_events(packet, path, format=None):
    format = format or infer_format(path)
    if format == "csv":
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(f"# width={packet.width} height={packet.height}\n")
            fh.write("t,x,y,p\n")
            for t, x, y, p in zip(packet.t, packet.x, packet.y, packet.p):
                fh.write(f"{t:.{CSV_DECIMALS}f},{x},{y},{p}\n")
    elif format == "binary":
        if packet.width > 0xFFFF or packet.height > 0xFFFF:
            raise ValueError("geometry does not fit the binary header")
        rec = np.empty(len(packet), dtype=RECORD_DTYPE)
        rec["t"] = packet.t
        rec["x"] = packet.x
        rec["y"] = packet.y
        rec["p"] = packet.p
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(MAGIC, packet.width, packet.height, len(packet)))
            fh.write(rec.tobytes())
    else:
        raise ValueError(f"unknown format {format!r}")


def load_labels(path):
    labels = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                v = int(line)
            except ValueError:
                raise MalformedRecord(f"label {line!r} is not an integer", f"line {lineno}") from None
            if v < 1 and v != NOISE:
                raise MalformedRecord(f"label {v} is neither -1 nor >= 1", f"line {lineno}")
            labels.append(v)
    return np.asarray(labels, dtype=np.int64)


def save_labels(labels, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.writelines(f"{int(v)}\n" for v in labels)
