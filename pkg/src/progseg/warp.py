"""Motion-compensating warps and the two accumulation images built on them.

Images ("scalar images") are plain float64 arrays of shape ``(height, width)``
indexed ``img[y, x]``. Events are deposited by bilinear splatting onto the
four surrounding pixels; events warped off the sensor are dropped.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from progseg import kernels
from progseg.errors import LengthMismatch, ZeroTimespan

V_MAX = 1000.0


@dataclasses.dataclass(frozen=True)
class WarpParams:
    """Constant image-plane velocity of one cluster, in pixels per second."""

    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "vx", float(self.vx))
        object.__setattr__(self, "vy", float(self.vy))
        if not (math.isfinite(self.vx) and math.isfinite(self.vy)):
            raise ValueError(f"non-finite velocity ({self.vx}, {self.vy})")

    def __iter__(self):
        yield self.vx
        yield self.vy

    def clipped(self, v_max=V_MAX):
        """Scale down to speed ``v_max`` if faster."""
        speed = math.hypot(self.vx, self.vy)
        if speed <= v_max:
            return self
        return WarpParams(self.vx * v_max / speed, self.vy * v_max / speed)

    def __neg__(self):
        return WarpParams(-self.vx, -self.vy)


def warp_event(e, theta, t_ref):
    """Position of event ``e`` transported to ``t_ref`` along ``theta``."""
    dt = e.t - t_ref
    return e.x - dt * theta.vx, e.y - dt * theta.vy


def warp_point(x, y, t, theta, t_ref):
    dt = t - t_ref
    return x - dt * theta.vx, y - dt * theta.vy


def warped_positions(packet, theta, t_ref):
    dt = packet.t - t_ref
    return packet.xf - dt * theta.vx, packet.yf - dt * theta.vy


def _weights(packet, column, name):
    column = np.asarray(column, dtype=np.float64).reshape(-1)
    if len(column) != len(packet):
        raise LengthMismatch(f"{name} has {len(column)} entries for {len(packet)} events")
    return column


def accumulate_wiwe(packet, p_j, c_j, theta, t_ref):
    """Weighted image of warped events: each event deposits ``c * p``."""
    p_j = _weights(packet, p_j, "probability column")
    c_j = _weights(packet, c_j, "confidence column")
    if np.any((p_j < 0) | (p_j > 1)) or np.any((c_j < 0) | (c_j > 1)):
        raise ValueError("probabilities and confidences must lie in [0, 1]")
    return kernels.splat_warped(
        packet.xf, packet.yf, packet.t, p_j * c_j, theta.vx, theta.vy, t_ref, packet.width, packet.height
    )


def accumulate_weighted(packet, weights, theta, t_ref):
    """Splat arbitrary per-event weights (no range check)."""
    weights = _weights(packet, weights, "weights")
    return kernels.splat_warped(
        packet.xf, packet.yf, packet.t, weights, theta.vx, theta.vy, t_ref, packet.width, packet.height
    )


def accumulate_iec(packet, theta, t_ref):
    """Polarity-signed image of warped events divided by the packet timespan."""
    span = packet.t1 - packet.t0
    if not span > 0:
        raise ZeroTimespan(f"packet timespan is {span}")
    img = kernels.splat_warped(
        packet.xf, packet.yf, packet.t, packet.pf, theta.vx, theta.vy, t_ref, packet.width, packet.height
    )
    img /= span
    return img


def sample_bilinear(img, x, y):
    """Bilinear lookup at a continuous position; 0 outside ``[0, W-1] x [0, H-1]``."""
    out = kernels.sample_warped(img, np.array([x], float), np.array([y], float), np.zeros(1), 0.0, 0.0, 0.0)
    return float(out[0])


def sample_at_warped(img, packet, theta, t_ref):
    """``img`` sampled at every event's warped position."""
    return kernels.sample_warped(img, packet.xf, packet.yf, packet.t, theta.vx, theta.vy, t_ref)


def histogram(packet, weights=None):
    """Plain (unwarped) per-pixel count or weight sum."""
    w = np.ones(len(packet)) if weights is None else np.asarray(weights, float)
    out = np.zeros((packet.height, packet.width))
    np.add.at(out, (packet.y, packet.x), w)
    return out


def write_pgm(img, path):
    """16-bit binary PGM with the affine value mapping in a comment line."""
    img = np.asarray(img, dtype=np.float64)
    lo = float(img.min()) if img.size else 0.0
    hi = float(img.max()) if img.size else 0.0
    scale = 65535.0 / (hi - lo) if hi > lo else 0.0
    pixels = np.rint((img - lo) * scale).astype(">u2")
    height, width = img.shape
    header = (
        f"P5\n# value = {lo!r} + pixel * {((hi - lo) / 65535.0)!r}\n{width} {height}\n65535\n"
    ).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pixels.tobytes())


def read_pgm(path):
    """Inverse of :func:`write_pgm`, returning the de-mapped float image."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    comment = None
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            end = data.index(b"\n", pos)
            comment = data[pos + 1 : end].decode("ascii")
            pos = end + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    pos += 1
    width, height = int(tokens[1]), int(tokens[2])
    raw = np.frombuffer(data, dtype=">u2", count=width * height, offset=pos).reshape(height, width)
    lo, step = 0.0, 1.0
    if comment and "value =" in comment:
        rhs = comment.split("=", 1)[1]
        lo_s, step_s = rhs.split("+ pixel *")
        lo, step = float(lo_s), float(step_s)
    return lo + raw.astype(np.float64) * step
