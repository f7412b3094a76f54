"""Row-aligned per-trajectory feature sets and their on-disk format."""

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .binfmt import FormatError, Reader, pack_name
from .media_io import atomic_write
from .trajectories import CHANNELS, TrackParams, describe_trajectories, track_points

FEATURE_MAGIC = b"TFEA"
FEATURE_VERSION = 1

FLAG_TED = 1
FLAG_RAW = 2

LOC_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("t", "<f4"), ("frame", "<u4"), ("stride", "<u4")]
)


def empty_locations(n=0):
    return np.zeros(n, dtype=LOC_DTYPE)


@dataclass(eq=False)
class FeatureSet:
    """Descriptors of one clip.

    ``channels`` maps channel name to an (n, d) float32 matrix; row i of
    every channel and of ``locations`` describes the same trajectory.
    ``raw`` marks descriptors that have not been PCA-projected yet.
    """

    channels: dict
    locations: np.ndarray
    clip_frame_count: int
    ted_applied: bool = False
    raw: bool = False
    processed_frames: int = field(default=0, compare=False)

    def __post_init__(self):
        self.channels = {
            k: np.ascontiguousarray(v, dtype=np.float32) for k, v in self.channels.items()
        }
        for k, v in self.channels.items():
            if v.ndim != 2:
                raise ValueError(f"channel {k} is not a matrix")
        self.locations = np.ascontiguousarray(self.locations, dtype=LOC_DTYPE)
        n = len(self.locations)
        for k, v in self.channels.items():
            if v.shape[0] != n:
                raise ValueError(
                    f"channel {k} has {v.shape[0]} rows but there are {n} locations"
                )

    def __len__(self):
        return len(self.locations)

    @property
    def n_rows(self):
        return len(self.locations)

    @property
    def dims(self):
        return {k: v.shape[1] for k, v in self.channels.items()}

    @property
    def t_norm(self):
        return self.locations["t"]

    def select(self, rows):
        """Subset of rows, given as an index array or boolean mask."""
        return replace(
            self,
            channels={k: v[rows] for k, v in self.channels.items()},
            locations=self.locations[rows],
        )

    def equals(self, other):
        return self.to_bytes() == other.to_bytes()

    def to_bytes(self):
        flags = (FLAG_TED if self.ted_applied else 0) | (FLAG_RAW if self.raw else 0)
        out = [
            FEATURE_MAGIC,
            struct.pack(
                "<IIIIB",
                FEATURE_VERSION,
                self.clip_frame_count,
                self.n_rows,
                len(self.channels),
                flags,
            ),
        ]
        for name, mat in self.channels.items():
            out.append(pack_name(name))
            out.append(struct.pack("<I", mat.shape[1]))
            out.append(mat.astype("<f4").tobytes())
        out.append(self.locations.tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data, source=""):
        r = Reader(data, source)
        r.magic(FEATURE_MAGIC)
        version, frame_count, n, n_ch, flags = r.unpack("<IIIIB")
        if version != FEATURE_VERSION:
            raise FormatError(f"{source}: unsupported feature file version {version}")
        channels = {}
        for _ in range(n_ch):
            name = r.name()
            (d,) = r.unpack("<I")
            channels[name] = r.array("<f4", n * d).reshape(n, d)
        locs = r.array(LOC_DTYPE, n)
        r.expect_end()
        return cls(channels, locs, frame_count, bool(flags & FLAG_TED), bool(flags & FLAG_RAW))


def concat_feature_sets(sets, clip_frame_count):
    if not sets:
        raise ValueError("nothing to concatenate")
    names = list(sets[0].channels)
    for s in sets[1:]:
        if list(s.channels) != names or s.dims != sets[0].dims:
            raise ValueError("feature sets have different channel layouts")
        if s.ted_applied != sets[0].ted_applied or s.raw != sets[0].raw:
            raise ValueError("feature sets are at different processing stages")
    return FeatureSet(
        {k: np.concatenate([s.channels[k] for s in sets]) for k in names},
        np.concatenate([s.locations for s in sets]),
        clip_frame_count,
        sets[0].ted_applied,
        sets[0].raw,
        processed_frames=sum(s.processed_frames for s in sets),
    )


def extract_raw_features(clip, params=TrackParams()):
    """Track and describe a clip without PCA; the bootstrap extractor."""
    trajs, flows = track_points(clip, params)
    desc = describe_trajectories(trajs, clip, flows, params)
    loc = desc["location"]
    locs = empty_locations(len(trajs))
    locs["x"] = loc[:, 0]
    locs["y"] = loc[:, 1]
    locs["t"] = loc[:, 2]
    locs["frame"] = loc[:, 3]
    return FeatureSet(
        {c: desc[c] for c in CHANNELS},
        locs,
        len(clip),
        raw=True,
        processed_frames=len(clip),
    )


def project_features(raw, pca):
    """Apply per-channel PCA, then append (x_norm, y_norm) to every channel."""
    if not raw.raw:
        raise ValueError("feature set is already projected")
    xy = np.stack([raw.locations["x"], raw.locations["y"]], axis=1).astype(np.float64)
    channels = {}
    for name, mat in raw.channels.items():
        model = pca[name]
        if model.input_dim != mat.shape[1]:
            raise ValueError(
                f"channel {name}: PCA expects dim {model.input_dim}, got {mat.shape[1]}"
            )
        channels[name] = np.concatenate([model.transform(mat), xy], axis=1)
    return replace(raw, channels=channels, raw=False)


def build_feature_set(clip, pca, params=TrackParams()):
    return project_features(extract_raw_features(clip, params), pca)


def save_feature_set(fs, path):
    atomic_write(path, fs.to_bytes())


def load_feature_set(path):
    with open(path, "rb") as f:
        return FeatureSet.from_bytes(f.read(), str(path))
