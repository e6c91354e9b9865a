"""Synthetic DVS recordings with per-event ground truth.

Scenes are 2-D sprite composites: textured rectangles sliding at constant
velocity over a uniform background, nearer objects first in the object list.
Every render step the log intensity of each pixel is compared against its
last event level; each crossing of ``+-C`` emits one event whose timestamp is
interpolated linearly inside the step, and the level moves by exactly ``C``
so residuals carry over. Sprites are rendered with exact area coverage, so
edges move smoothly at sub-pixel resolution.

Background activity is added afterwards as a homogeneous Poisson process
whose expected size is ``floor(n * number of signal events)``.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import yaml
from scipy.ndimage import gaussian_filter

from progseg.errors import SpecInvalid
from progseg.events import NOISE, EventPacket, LabeledEvents
from progseg.warp import V_MAX

NOISE_LEVELS = (0.05, 0.10, 0.15, 0.20, 0.25)
TEXTURES = ("flat", "blocks", "stripes", "blobs")

# slack for comparing a log-intensity change against a multiple of C
_EPS = 1e-9
_NO_OBJECT = np.iinfo(np.int64).max


@dataclasses.dataclass(frozen=True)
class SceneObject:
    """A rectangle of ``size = (w, h)`` pixels, top-left at ``position`` when t = 0.

    ``levels = (lo, hi)`` bounds the absolute log-intensity offset of each
    texture cell from the background; cell signs alternate at random.
    """

    size: tuple = (40, 30)
    position: tuple = (20.0, 20.0)
    velocity: tuple = (40.0, 0.0)
    texture: str = "flat"
    block: int = 4
    levels: tuple = (1.0, 1.0)

    def __post_init__(self):
        for name in ("size", "position", "velocity", "levels"):
            value = getattr(self, name)
            if len(value) != 2:
                raise SpecInvalid(f"object {name} needs two values, got {value!r}")
            object.__setattr__(self, name, tuple(value))
        if self.texture not in TEXTURES:
            raise SpecInvalid(f"texture must be one of {TEXTURES}")
        if min(self.size) < 1 or self.block < 1:
            raise SpecInvalid("object size and block must be >= 1")


@dataclasses.dataclass(frozen=True)
class SceneSpec:
    width: int = 240
    height: int = 180
    duration: float = 0.5
    objects: tuple = ()
    contrast: float = 0.5
    step: float = 1e-3
    noise: float = 0.0
    noise_model: str = "ba"
    background: float = 0.5
    v_max: float = V_MAX
    seed: int = 0

    def __post_init__(self):
        objs = tuple(o if isinstance(o, SceneObject) else SceneObject(**o) for o in self.objects)
        object.__setattr__(self, "objects", objs)
        if self.width < 1 or self.height < 1:
            raise SpecInvalid("geometry must be positive")
        if not self.contrast > 0:
            raise SpecInvalid("contrast threshold must be positive")
        if not (self.duration > 0 and self.step > 0):
            raise SpecInvalid("duration and step must be positive")
        if not 0.0 <= self.noise <= 1.0:
            raise SpecInvalid("noise level must lie in [0, 1]")
        if self.noise_model not in ("ba", "jitter"):
            raise SpecInvalid("noise_model must be 'ba' or 'jitter'")
        if not self.background > 0:
            raise SpecInvalid("background intensity must be positive")
        for k, o in enumerate(objs):
            if math.hypot(*o.velocity) > self.v_max:
                raise SpecInvalid(f"object {k} faster than v_max={self.v_max}")
            x, y = o.position
            w, h = o.size
            if x < 0 or y < 0 or x + w > self.width or y + h > self.height:
                raise SpecInvalid(f"object {k} not inside the sensor at t=0")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SpecInvalid(f"unknown scene keys: {sorted(unknown)}")
        if "geometry" in data:
            raise SpecInvalid("use width/height keys")
        try:
            return cls(**data)
        except TypeError as exc:
            raise SpecInvalid(str(exc)) from None

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["objects"] = [
            {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(o).items()}
            for o in self.objects
        ]
        return d


def load_spec(path):
    """Read a scene spec from a YAML (or JSON) key-value file."""
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SpecInvalid(f"cannot parse {path}: {exc}") from None
    if not isinstance(data, dict):
        raise SpecInvalid(f"{path} does not hold a mapping")
    return SceneSpec.from_dict(data)


def _texture(obj, rng):
    """Log-intensity offsets of the sprite, shape (h, w)."""
    w, h = obj.size
    lo, hi = obj.levels
    if obj.texture == "flat":
        return np.full((h, w), hi)
    if obj.texture == "stripes":
        cols = (np.arange(w) // obj.block) % 2
        row = np.where(cols == 0, hi, -hi)
        return np.tile(row, (h, 1))
    if obj.texture == "blobs":
        # sign changes of a smoothed random field: curved edges at every orientation
        field = gaussian_filter(rng.normal(size=(h, w)), obj.block / 2.0, mode="wrap")
        field /= np.max(np.abs(field)) or 1.0
        return np.sign(field) * (lo + (hi - lo) * np.abs(field))
    ny = -(-h // obj.block)
    nx = -(-w // obj.block)
    mags = rng.uniform(lo, hi, size=(ny, nx))
    signs = rng.choice((-1.0, 1.0), size=(ny, nx))
    cells = mags * signs
    return np.kron(cells, np.ones((obj.block, obj.block)))[:h, :w]


class _Sprite:
    def __init__(self, obj, log_offsets, background):
        h, w = log_offsets.shape
        self.obj = obj
        alpha = np.zeros((h + 2, w + 2))
        alpha[1:-1, 1:-1] = 1.0
        color = np.zeros((h + 2, w + 2))
        color[1:-1, 1:-1] = background * np.exp(log_offsets)
        self.alpha = alpha
        self.color = color  # premultiplied (alpha is 0 or 1 here)

    def rendered(self, t):
        """Area-coverage sprite at time ``t``: (x0, y0, color, alpha)."""
        px = self.obj.position[0] + self.obj.velocity[0] * t
        py = self.obj.position[1] + self.obj.velocity[1] * t
        x0 = math.floor(px)
        y0 = math.floor(py)
        fx = px - x0
        fy = py - y0
        out = []
        for m in (self.color, self.alpha):
            mx = (1.0 - fx) * m[:, 1:] + fx * m[:, :-1]
            out.append((1.0 - fy) * mx[1:, :] + fy * mx[:-1, :])
        return x0, y0, out[0], out[1]


def _render(sprites, spec, t):
    frame = np.full((spec.height, spec.width), float(spec.background))
    ids = np.full((spec.height, spec.width), _NO_OBJECT, dtype=np.int64)
    # painter's order: farthest (last listed) first
    for idx in range(len(sprites) - 1, -1, -1):
        x0, y0, color, alpha = sprites[idx].rendered(t)
        h, w = alpha.shape
        fx0, fy0 = max(x0, 0), max(y0, 0)
        fx1, fy1 = min(x0 + w, spec.width), min(y0 + h, spec.height)
        if fx0 >= fx1 or fy0 >= fy1:
            continue
        a = alpha[fy0 - y0 : fy1 - y0, fx0 - x0 : fx1 - x0]
        c = color[fy0 - y0 : fy1 - y0, fx0 - x0 : fx1 - x0]
        region = frame[fy0:fy1, fx0:fx1]
        frame[fy0:fy1, fx0:fx1] = c + (1.0 - a) * region
        ids[fy0:fy1, fx0:fx1][a > 1e-9] = idx
    return np.log(frame), ids


def log_intensity(spec, t):
    """Rendered log-intensity frame of the scene at time ``t``, shape (H, W)."""
    rng = np.random.default_rng([spec.seed, 1])
    sprites = [_Sprite(o, _texture(o, rng), spec.background) for o in spec.objects]
    return _render(sprites, spec, t)[0]


def render_signal(spec):
    """Noise-free events of the scene (threshold jitter applied if that model is selected)."""
    rng = np.random.default_rng([spec.seed, 1])
    sprites = [_Sprite(o, _texture(o, rng), spec.background) for o in spec.objects]
    jitter_rng = np.random.default_rng([spec.seed, 2])
    jitter = spec.noise_model == "jitter" and spec.noise > 0
    C = spec.contrast

    def thresholds(n):
        if not jitter:
            return np.full(n, C)
        return np.maximum(C + jitter_rng.normal(0.0, spec.noise * C, size=n), 0.1 * C)

    n_steps = int(round(spec.duration / spec.step))
    L_prev, ids_prev = _render(sprites, spec, 0.0)
    L_ref = L_prev.ravel().copy()
    thr_pos = thresholds(L_ref.size)
    thr_neg = thresholds(L_ref.size)
    chunks = []
    for k in range(1, n_steps + 1):
        t_prev, t_new = (k - 1) * spec.step, k * spec.step
        if k == n_steps:
            t_new = spec.duration
        L_new, ids_new = _render(sprites, spec, t_new)
        changed = np.nonzero(L_new.ravel() != L_prev.ravel())[0]
        if len(changed):
            lp = L_prev.ravel()[changed]
            ln = L_new.ravel()[changed]
            ref = L_ref[changed]
            tp = thr_pos[changed]
            tn = thr_neg[changed]
            owner = np.minimum(ids_prev.ravel()[changed], ids_new.ravel()[changed])
            while True:
                up = ln - ref >= tp - _EPS
                down = ref - ln >= tn - _EPS
                fire = up | down
                if not fire.any():
                    break
                idx = np.nonzero(fire)[0]
                sign = np.where(up[idx], 1, -1)
                level = ref[idx] + sign * np.where(up[idx], tp[idx], tn[idx])
                frac = np.clip((level - lp[idx]) / (ln[idx] - lp[idx]), 0.0, 1.0)
                pix = changed[idx]
                chunks.append((pix, t_prev + frac * (t_new - t_prev), sign, owner[idx]))
                ref[idx] = level
                if jitter:
                    tp[idx[sign > 0]] = thresholds(int(np.sum(sign > 0)))
                    tn[idx[sign < 0]] = thresholds(int(np.sum(sign < 0)))
            L_ref[changed] = ref
            thr_pos[changed] = tp
            thr_neg[changed] = tn
        L_prev, ids_prev = L_new, ids_new
    if chunks:
        pix = np.concatenate([c[0] for c in chunks])
        t = np.concatenate([c[1] for c in chunks])
        p = np.concatenate([c[2] for c in chunks])
        owner = np.concatenate([c[3] for c in chunks])
    else:
        pix = np.zeros(0, np.int64)
        t = np.zeros(0)
        p = np.zeros(0, np.int8)
        owner = np.zeros(0, np.int64)
    order = np.argsort(t, kind="stable")
    pix, t, p, owner = pix[order], t[order], p[order], owner[order]
    labels = np.where(owner == _NO_OBJECT, NOISE, owner + 1)
    packet = EventPacket(pix % spec.width, pix // spec.width, t, p, spec.width, spec.height, 0.0, spec.duration)
    return LabeledEvents(packet, labels)


def inject_noise(labeled, n, seed=0):
    """Add background activity: Poisson(floor(n * N_signal)) uniform events labelled NOISE."""
    if not 0.0 <= n <= 1.0:
        raise ValueError("noise level must lie in [0, 1]")
    n_signal = int(np.sum(labeled.labels != NOISE))
    lam = math.floor(n * n_signal)
    if lam == 0:
        return labeled
    rng = np.random.default_rng(seed)
    pk = labeled.packet
    count = int(rng.poisson(lam))
    x = rng.integers(0, pk.width, size=count)
    y = rng.integers(0, pk.height, size=count)
    t = rng.uniform(pk.t0, pk.t1, size=count)
    p = rng.choice(np.array([-1, 1]), size=count)
    all_t = np.concatenate([pk.t, t])
    order = np.argsort(all_t, kind="stable")
    packet = EventPacket(
        np.concatenate([pk.x, x])[order],
        np.concatenate([pk.y, y])[order],
        all_t[order],
        np.concatenate([pk.p, p])[order],
        pk.width,
        pk.height,
        pk.t0,
        pk.t1,
    )
    labels = np.concatenate([labeled.labels, np.full(count, NOISE)])[order]
    return LabeledEvents(packet, labels)


def generate_scene(spec):
    """Signal events plus, for the ``ba`` model, injected background activity."""
    labeled = render_signal(spec)
    if spec.noise_model == "ba" and spec.noise > 0:
        labeled = inject_noise(labeled, spec.noise, seed=[spec.seed, 3])
    return labeled


def standard_scenes(seed=0):
    """The four base scenes (no noise): varying texture density, 0 to 3 occlusions."""
    base = dict(width=240, height=180, duration=0.4, contrast=0.5, step=1e-3)
    scenes = [
        # dense texture, no overlap
        [
            dict(size=(34, 28), position=(160, 20), velocity=(-50, 10), texture="blobs", block=4, levels=(0.5, 1.0)),
            dict(size=(32, 32), position=(30, 80), velocity=(35, -15), texture="blobs", block=4, levels=(0.5, 1.0)),
            dict(size=(34, 26), position=(120, 130), velocity=(-5, -35), texture="blobs", block=4, levels=(0.5, 1.0)),
        ],
        # sparse texture, one occlusion
        [
            dict(size=(40, 32), position=(60, 60), velocity=(45, 0), texture="blobs", block=10, levels=(0.6, 1.4)),
            dict(size=(40, 40), position=(110, 50), velocity=(-20, 20), texture="blobs", block=8, levels=(0.6, 1.2)),
            dict(size=(36, 28), position=(170, 130), velocity=(-40, -25), texture="blobs", block=8, levels=(0.6, 1.2)),
        ],
        # dense texture, two occlusions
        [
            dict(size=(32, 28), position=(40, 40), velocity=(50, 20), texture="blobs", block=4, levels=(0.5, 1.0)),
            dict(size=(36, 34), position=(90, 60), velocity=(-15, 30), texture="blobs", block=5, levels=(0.5, 1.0)),
            dict(size=(34, 28), position=(125, 90), velocity=(-45, -30), texture="blobs", block=4, levels=(0.5, 1.0)),
        ],
        # medium texture, three occlusions
        [
            dict(size=(34, 30), position=(40, 70), velocity=(55, -5), texture="blobs", block=6, levels=(0.6, 1.2)),
            dict(size=(38, 34), position=(95, 45), velocity=(-10, 30), texture="blobs", block=7, levels=(0.6, 1.2)),
            dict(size=(34, 30), position=(110, 85), velocity=(-40, 0), texture="blobs", block=6, levels=(0.6, 1.2)),
        ],
    ]
    return [SceneSpec(objects=objs, seed=seed * 100 + i, **base) for i, objs in enumerate(scenes)]


def standard_suite(seed=0, levels=NOISE_LEVELS):
    """4 scenes x 5 noise levels = 20 named sequences, deterministic in ``seed``."""
    suite = []
    for i, spec in enumerate(standard_scenes(seed)):
        signal = render_signal(spec)
        for j, n in enumerate(levels):
            name = f"scene{i + 1}_n{n:.2f}"
            suite.append((name, inject_noise(signal, n, seed=[seed, i, j])))
    return suite
