"""Synthetic moving-blob datasets for desk-scale experiments.

``velocity`` datasets: each class is a closed motion path (circle, square,
...) traversed once per clip; every clip draws a playback speed factor, so
a clip at speed s is about base_length / s frames long.

``order`` datasets: classes come in pairs. The first class of a pair plays
a burst of gesture A (an oscillation along one axis), a pause, then a burst
of gesture B (along another axis); the second class is the frame reversal
of that script. Both classes contain the same local motions in distribution
and differ only in their order.
"""

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .media_io import (
    DatasetManifest,
    ManifestEntry,
    VideoClip,
    save_clip,
    write_manifest,
)

PATHS = ("circle", "square", "eight", "triangle", "zigzag", "line")
GESTURES = (0.0, 90.0, 45.0, 135.0)
# order-mode pauses (lead, gap, tail) are drawn from [ORDER_PAUSE, 2 * ORDER_PAUSE);
# longer than a track, and spread over a full track lifetime so that track
# seeding cycles line up with either burst equally often
ORDER_PAUSE = 16


@dataclass
class SynthSpec:
    mode: str = "velocity"
    classes: int = 3
    clips_per_class: int = 50
    resolution: tuple = (64, 64)  # (width, height)
    base_length: int = 96
    n_groups: int = 5
    speed_range: tuple = (1.0, 3.0)
    # optional per-class speed ranges, overriding speed_range
    class_speed_ranges: list = field(default_factory=list)
    blob_radius: tuple = (4.0, 6.0)
    path_scale: tuple = (0.22, 0.3)  # fraction of min(width, height)
    background_contrast: float = 40.0
    noise: float = 0.0

    def __post_init__(self):
        if self.mode not in ("velocity", "order"):
            raise ValueError(f"unknown synthetic mode {self.mode!r}")
        if self.classes < 2 or self.clips_per_class < 2:
            raise ValueError("need at least 2 classes and 2 clips per class")
        if self.mode == "order" and self.classes % 2:
            raise ValueError("order mode needs an even number of classes")
        if self.n_groups < 1:
            raise ValueError("n_groups must be positive")
        self.resolution = tuple(int(v) for v in self.resolution)
        self.speed_range = tuple(float(v) for v in self.speed_range)

    def speed_range_for(self, cls):
        if self.class_speed_ranges:
            return tuple(self.class_speed_ranges[cls % len(self.class_speed_ranges)])
        return self.speed_range

    def class_names(self):
        if self.mode == "velocity":
            return [f"{PATHS[c % len(PATHS)]}{c // len(PATHS) or ''}" for c in range(self.classes)]
        names = []
        for p in range(self.classes // 2):
            names += [f"pair{p}_fwd", f"pair{p}_rev"]
        return names


def _path_point(kind, s):
    """Unit-scale point on a closed path at phase s (array, period 1)."""
    s = np.mod(s, 1.0)
    a = 2 * np.pi * s
    if kind == "circle":
        return np.cos(a), np.sin(a)
    if kind == "eight":
        return np.sin(a), 0.6 * np.sin(2 * a)
    if kind == "line":
        return np.sin(a), 0.0 * a
    if kind == "zigzag":
        x = np.sin(a)
        y = 0.5 * (2 * np.abs(np.mod(4 * s, 1.0) * 2 - 1) - 1)
        return x, y
    if kind in ("square", "triangle"):
        n = 4 if kind == "square" else 3
        ang = 2 * np.pi * np.arange(n + 1) / n + (np.pi / 4 if n == 4 else np.pi / 2)
        vx, vy = np.cos(ang), np.sin(ang)
        u = s * n
        k = np.minimum(np.floor(u).astype(int), n - 1)
        f = u - k
        return vx[k] * (1 - f) + vx[k + 1] * f, vy[k] * (1 - f) + vy[k + 1] * f
    raise ValueError(kind)


def _background(rng, h, w, contrast):
    noise = rng.uniform(-1.0, 1.0, size=(h + 8, w + 8))
    tex = ndimage.gaussian_filter(noise, 1.2)[4:-4, 4:-4]
    tex = tex / (np.abs(tex).max() + 1e-12)
    return 100.0 + contrast * tex


def _render(bg, centers, radius, value, rng=None, noise=0.0):
    """Anti-aliased disc with a darker core drawn over ``bg`` per frame."""
    h, w = bg.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    frames = np.empty((len(centers), h, w))
    for t, (cx, cy) in enumerate(centers):
        d = np.hypot(xx - cx, yy - cy)
        cover = np.clip(radius - d + 0.5, 0.0, 1.0)
        core = np.clip(0.45 * radius - d + 0.5, 0.0, 1.0)
        img = bg * (1 - cover) + value * cover
        img = img * (1 - core) + (value - 90.0) * core
        if noise:
            img = img + rng.normal(0.0, noise, size=img.shape)
        frames[t] = img
    return np.clip(np.rint(frames), 0, 255).astype(np.uint8)


@dataclass
class ClipScript:
    """All random draws that define one clip."""

    cls: int
    speed: float
    n_frames: int
    center: tuple
    scale: float
    phase: float
    direction: int
    radius: float
    value: float
    rotation: float
    bg_seed: int
    period: float = 0.0
    phase2: float = 0.0
    lead: int = 0
    burst: int = 0
    gap: int = 0


def velocity_positions(kind, script, base_length):
    t = np.arange(script.n_frames)
    s = script.phase + script.direction * t * script.speed / base_length
    px, py = _path_point(kind, s)
    c, sn = math.cos(script.rotation), math.sin(script.rotation)
    x = script.center[0] + script.scale * (c * px - sn * py)
    y = script.center[1] + script.scale * (sn * px + c * py)
    return np.stack([x, y], axis=1)


def order_segments(script):
    """Frame ranges (a0, a1), (b0, b1) of the two bursts; the rest is pause."""
    a0 = script.lead
    b0 = a0 + script.burst + script.gap
    return (a0, a0 + script.burst), (b0, b0 + script.burst)


def order_positions(pair, script):
    """Burst of gesture A, a pause, then a burst of gesture B.

    Each burst is an oscillation under a Hann envelope with a random phase,
    so a burst played backwards is drawn from the same distribution as one
    played forwards. The pause is longer than a track, so no track sees
    both gestures.
    """
    n = script.n_frames
    t = np.arange(n, dtype=np.float64)
    omega = 2 * np.pi * script.speed / script.period
    ga = math.radians(GESTURES[pair % len(GESTURES)])
    gb = math.radians(GESTURES[(pair + 1) % len(GESTURES)])
    x = np.full(n, script.center[0])
    y = np.full(n, script.center[1])
    for (lo, hi), g, ph in zip(order_segments(script), (ga, gb), (script.phase, script.phase2)):
        tt = t[lo:hi] - lo
        env = np.sin(np.pi * (tt + 0.5) / (hi - lo)) ** 2
        s = env * np.sin(omega * tt + ph)
        x[lo:hi] += script.scale * s * math.cos(g)
        y[lo:hi] += script.scale * s * math.sin(g)
    return np.stack([x, y], axis=1)


def draw_script(spec, cls, rng):
    w, h = spec.resolution
    lo, hi = spec.speed_range_for(cls)
    speed = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    n_frames = max(2, int(round(spec.base_length / speed)))
    lead = burst = gap = 0
    if spec.mode == "order":
        # only order mode consumes these draws
        lead, gap, tail = (int(v) for v in rng.integers(ORDER_PAUSE, 2 * ORDER_PAUSE, size=3))
        gap += 2
        burst = max(2, int(round(0.35 * spec.base_length / speed)))
        n_frames = lead + 2 * burst + gap + tail
    scale = float(rng.uniform(*spec.path_scale)) * min(w, h)
    margin = scale + spec.blob_radius[1] + 2
    cx = float(rng.uniform(margin, w - margin)) if w > 2 * margin else w / 2
    cy = float(rng.uniform(margin, h - margin)) if h > 2 * margin else h / 2
    return ClipScript(
        cls=cls,
        speed=speed,
        n_frames=n_frames,
        center=(cx, cy),
        scale=scale,
        phase=float(rng.uniform(0, 1)) if spec.mode == "velocity" else float(rng.uniform(0, 2 * np.pi)),
        direction=int(rng.choice([-1, 1])),
        radius=float(rng.uniform(*spec.blob_radius)),
        value=float(rng.uniform(190, 240)),
        rotation=float(rng.uniform(-0.3, 0.3)) if spec.mode == "velocity" else 0.0,
        bg_seed=int(rng.integers(2**31)),
        period=float(rng.uniform(10.0, 16.0)),
        phase2=float(rng.uniform(0, 2 * np.pi)),
        lead=lead,
        burst=burst,
        gap=gap,
    )


def render_script(spec, script, reverse=False):
    w, h = spec.resolution
    bg_rng = np.random.default_rng(script.bg_seed)
    bg = _background(bg_rng, h, w, spec.background_contrast)
    if spec.mode == "velocity":
        kind = PATHS[script.cls % len(PATHS)]
        pos = velocity_positions(kind, script, spec.base_length)
    else:
        pos = order_positions(script.cls // 2, script)
    frames = _render(bg, pos, script.radius, script.value, bg_rng, spec.noise)
    if reverse:
        frames = frames[::-1]
    return frames


def synthesize(spec, seed):
    """Yield (clip, label, group, duration, script) for every synthetic clip."""
    names = spec.class_names()
    for cls in range(spec.classes):
        for i in range(spec.clips_per_class):
            rng = np.random.default_rng([int(seed), cls, i])
            if spec.mode == "order":
                # both classes of a pair draw forward scripts; odd classes play reversed
                script = draw_script(spec, cls - cls % 2, rng)
                script.cls = cls
                frames = render_script(spec, script, reverse=bool(cls % 2))
            else:
                script = draw_script(spec, cls, rng)
                frames = render_script(spec, script)
            label = names[cls]
            clip = VideoClip(frames, f"{label}_{i:03d}")
            yield clip, label, f"g{i % spec.n_groups}", len(frames), script


def generate_synthetic_dataset(spec, seed, out_dir):
    """Write clips (``clips/*.vclp``) and ``manifest.tsv`` under ``out_dir``."""
    out_dir = Path(out_dir)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    entries = []
    for clip, label, group, duration, _ in synthesize(spec, seed):
        rel = f"clips/{clip.source_id}.vclp"
        save_clip(clip, out_dir / rel)
        entries.append(ManifestEntry(rel, label, group, duration))
    manifest = DatasetManifest(entries, {"metric": "accuracy", "mode": spec.mode, "seed": str(seed)})
    write_manifest(manifest, out_dir / "manifest.tsv")
    return manifest


def spec_to_dict(spec):
    return asdict(spec)
