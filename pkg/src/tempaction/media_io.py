"""Frame sequences: loading, saving, manifests and temporal transforms."""

import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CLIP_MAGIC = b"VCLP"


class ClipError(ValueError):
    """Raised for unreadable or malformed clips and manifests."""


@dataclass(frozen=True)
class VideoClip:
    """Grayscale clip; ``frames`` is a read-only (T, H, W) uint8 array."""

    frames: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3:
            raise ClipError("frames must be a (T, H, W) array")
        if frames.shape[0] < 1:
            raise ClipError("clip has zero frames")
        if frames.dtype != np.uint8:
            frames = np.clip(np.rint(frames), 0, 255).astype(np.uint8)
        frames = np.ascontiguousarray(frames)
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def width(self):
        return self.frames.shape[2]

    @property
    def height(self):
        return self.frames.shape[1]

    def __len__(self):
        return self.frames.shape[0]

    def __eq__(self, other):
        if not isinstance(other, VideoClip):
            return NotImplemented
        return self.frames.shape == other.frames.shape and np.array_equal(
            self.frames, other.frames
        )

    __hash__ = None


@dataclass
class ManifestEntry:
    clip_path: str
    label: str
    group: str
    duration_frames: float


@dataclass
class DatasetManifest:
    entries: list
    # optional "# key: value" header lines, e.g. metric: accuracy
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for e in self.entries:
            if not e.group:
                raise ClipError(f"empty group id for {e.clip_path}")
            if not e.duration_frames >= 1:
                raise ClipError(f"duration must be >= 1 for {e.clip_path}")

    @property
    def classes(self):
        return sorted({e.label for e in self.entries})

    @property
    def groups(self):
        return sorted({e.group for e in self.entries})

    @property
    def labels(self):
        return [e.label for e in self.entries]

    @property
    def metric(self):
        return self.meta.get("metric", "accuracy")

    def durations_by_class(self):
        out = {}
        for e in self.entries:
            out.setdefault(e.label, []).append(e.duration_frames)
        return out

    def resolve(self, entry, base_dir):
        p = Path(entry.clip_path)
        return p if p.is_absolute() else Path(base_dir) / p


def read_manifest(path):
    meta = {}
    entries = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].partition(":")
                if sep:
                    meta[key.strip()] = value.strip()
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ClipError(f"{path}:{lineno}: expected 4 tab-separated fields")
            clip_path, label, group, dur = parts
            try:
                duration = float(dur)
            except ValueError as exc:
                raise ClipError(f"{path}:{lineno}: bad duration {dur!r}") from exc
            if duration.is_integer():
                duration = int(duration)
            entries.append(ManifestEntry(clip_path, label, group, duration))
    return DatasetManifest(entries, meta)


def format_manifest(manifest):
    lines = [f"# {k}: {v}\n" for k, v in sorted(manifest.meta.items())]
    for e in manifest.entries:
        lines.append(f"{e.clip_path}\t{e.label}\t{e.group}\t{e.duration_frames}\n")
    return "".join(lines)


def atomic_write(path, data):
    """Write bytes or text to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    kwargs = {} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"}
    with open(tmp, mode, **kwargs) as f:
        f.write(data)
    os.replace(tmp, path)


def write_manifest(manifest, path):
    atomic_write(path, format_manifest(manifest))


# -- PGM / packed clip containers ------------------------------------------


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval, with '#' comments allowed
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ClipError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ClipError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ClipError(f"{path}: only 8-bit PGM is supported")
    pix = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return pix.reshape(h, w)


def write_pgm(path, frame):
    frame = np.asarray(frame, dtype=np.uint8)
    h, w = frame.shape
    atomic_write(path, b"P5\n%d %d\n255\n" % (w, h) + frame.tobytes())


def encode_clip(clip):
    t, h, w = clip.frames.shape
    return CLIP_MAGIC + struct.pack("<III", w, h, t) + clip.frames.tobytes()


def decode_clip(data, source_id=""):
    if data[:4] != CLIP_MAGIC:
        raise ClipError(f"{source_id}: bad clip magic")
    if len(data) < 16:
        raise ClipError(f"{source_id}: truncated clip header")
    w, h, t = struct.unpack_from("<III", data, 4)
    if t == 0:
        raise ClipError(f"{source_id}: clip has zero frames")
    n = w * h * t
    if len(data) - 16 < n:
        raise ClipError(f"{source_id}: truncated clip payload")
    frames = np.frombuffer(data, dtype=np.uint8, count=n, offset=16)
    return VideoClip(frames.reshape(t, h, w), source_id)


def save_clip(clip, path):
    atomic_write(path, encode_clip(clip))


def load_frame_sequence(path):
    """Load a packed ``.vclp`` container or a directory of PGM frames.

    Frame files in a directory are ordered lexicographically by name.
    """
    path = Path(path)
    if not path.exists():
        raise ClipError(f"{path}: no such clip")
    if path.is_dir():
        names = sorted(p for p in path.iterdir() if p.suffix.lower() == ".pgm")
        if not names:
            raise ClipError(f"{path}: empty clip directory")
        frames = [read_pgm(p) for p in names]
        shape = frames[0].shape
        for p, fr in zip(names, frames):
            if fr.shape != shape:
                raise ClipError(
                    f"{p}: frame size {fr.shape[::-1]} differs from {shape[::-1]}"
                )
        return VideoClip(np.stack(frames), str(path))
    return decode_clip(path.read_bytes(), str(path))


def save_frame_directory(clip, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    digits = max(6, len(str(len(clip))))
    for i, fr in enumerate(clip.frames):
        write_pgm(directory / f"{i:0{digits}d}.pgm", fr)


# -- temporal transforms ----------------------------------------------------


def temporal_subsample(clip, stride):
    """Keep frames 0, stride, 2*stride, ...; yields ceil(T/stride) frames."""
    if int(stride) != stride or stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride!r}")
    stride = int(stride)
    if stride == 1:
        return clip
    return VideoClip(clip.frames[::stride], clip.source_id)


def subsampled_length(n_frames, stride):
    return math.ceil(n_frames / stride)


def gaussian_kernel(alpha):
    """Discrete Gaussian with std ``alpha`` truncated at 3*alpha (unnormalized)."""
    radius = int(math.ceil(3 * alpha))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-0.5 * (k / alpha) ** 2)


def temporal_smooth(clip, alpha):
    """Per-pixel temporal Gaussian smoothing with std ``alpha`` frames.

    The kernel is renormalized over the frames that exist near the clip
    boundaries. ``alpha == 0`` returns the clip unchanged.
    """
    if alpha < 0 or not math.isfinite(alpha):
        raise ValueError("alpha must be a finite non-negative number")
    if alpha == 0:
        return clip
    kern = gaussian_kernel(alpha)
    radius = len(kern) // 2
    src = clip.frames.astype(np.float64)
    n = len(clip)
    out = np.empty_like(src)
    for t in range(n):
        lo, hi = max(0, t - radius), min(n, t + radius + 1)
        w = kern[lo - t + radius : hi - t + radius]
        out[t] = np.tensordot(w / w.sum(), src[lo:hi], axes=1)
    return VideoClip(np.clip(np.rint(out), 0, 255).astype(np.uint8), clip.source_id)
