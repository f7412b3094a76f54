"""Fisher-vector encoding over per-channel GMM codebooks."""

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .binfmt import Reader, pack_name
from .features import FeatureSet, load_feature_set
from .trajectories import CHANNELS

ENCODING_MAGIC = b"TENC"


@dataclass(frozen=True)
class Block:
    channel: str
    level: int
    region: int
    offset: int
    length: int


@dataclass(eq=False)
class Encoding:
    """A float32 vector plus the layout of its normalized blocks."""

    vector: np.ndarray
    layout: tuple

    def __post_init__(self):
        self.vector = np.ascontiguousarray(self.vector, dtype=np.float32)
        self.layout = tuple(self.layout)
        if sum(b.length for b in self.layout) != len(self.vector):
            raise ValueError("layout lengths do not cover the vector")

    def __len__(self):
        return len(self.vector)

    def block(self, b):
        return self.vector[b.offset : b.offset + b.length]

    def blocks(self):
        return [(b, self.block(b)) for b in self.layout]

    def to_bytes(self):
        out = [ENCODING_MAGIC, struct.pack("<I", len(self.layout))]
        for b in self.layout:
            out.append(pack_name(b.channel))
            out.append(struct.pack("<IIII", b.level, b.region, b.offset, b.length))
        out.append(struct.pack("<I", len(self.vector)))
        out.append(self.vector.astype("<f4").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data, source=""):
        r = Reader(data, source)
        r.magic(ENCODING_MAGIC)
        (n,) = r.unpack("<I")
        layout = []
        for _ in range(n):
            name = r.name()
            layout.append(Block(name, *r.unpack("<IIII")))
        (length,) = r.unpack("<I")
        vec = r.array("<f4", length)
        r.expect_end()
        return cls(vec, layout)


def concatenate_encodings(encodings):
    """Join encodings end to end, shifting layout offsets."""
    layout = []
    offset = 0
    for enc in encodings:
        for b in enc.layout:
            layout.append(Block(b.channel, b.level, b.region, offset + b.offset, b.length))
        offset += len(enc)
    if not encodings:
        return Encoding(np.zeros(0, dtype=np.float32), ())
    return Encoding(np.concatenate([e.vector for e in encodings]), layout)


def fisher_encode(rows, gmm):
    """Mean and variance gradients of the set's log-likelihood, 2*K*d values.

    Output layout: all K mean-gradient blocks (K*d), then all K
    variance-gradient blocks (K*d). An empty set encodes as zeros.
    """
    x = np.asarray(rows, dtype=np.float64)
    k, d = gmm.means.shape
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"descriptor dimension {x.shape[-1]} does not match codebook dimension {d}")
    n = len(x)
    if n == 0:
        return np.zeros(2 * k * d)
    gamma = gmm.posteriors(x)
    s0 = gamma.sum(axis=0)
    s1 = gamma.T @ x
    s2 = gamma.T @ (x * x)
    mu = gmm.means
    var = gmm.variances
    sigma = np.sqrt(var)
    w = gmm.weights[:, None]
    g_mu = (s1 - s0[:, None] * mu) / sigma / (n * np.sqrt(w))
    second = (s2 - 2.0 * mu * s1 + s0[:, None] * mu * mu) / var
    g_sigma = (second - s0[:, None]) / (n * np.sqrt(2.0 * w))
    return np.concatenate([g_mu.ravel(), g_sigma.ravel()])


def normalize(vector):
    """Signed square root, then L2 normalization; zeros stay zeros."""
    v = np.asarray(vector, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite entries in encoding")
    z = np.sign(v) * np.sqrt(np.abs(v))
    norm = np.linalg.norm(z)
    if norm == 0:
        return z
    return z / norm


def concat_channels(blocks, order=CHANNELS, level=1, region=0):
    """Concatenate per-channel vectors in ``order`` into an Encoding."""
    missing = [c for c in order if c not in blocks]
    if missing:
        raise KeyError(f"missing channel(s): {', '.join(missing)}")
    layout = []
    offset = 0
    for c in order:
        n = len(blocks[c])
        layout.append(Block(c, level, region, offset, n))
        offset += n
    vec = np.concatenate([np.asarray(blocks[c], dtype=np.float64) for c in order]) if order else []
    return Encoding(vec, layout)


def encode_channels(features, codebook, order=None, normalized=True):
    """Per-channel Fisher vectors of a whole feature set, one Encoding."""
    order = tuple(order or codebook.channels)
    blocks = {}
    for c in order:
        fv = fisher_encode(features.channels[c], codebook[c])
        blocks[c] = normalize(fv) if normalized else fv
    return concat_channels(blocks, order)


def sample_descriptors(sources, n=256000, seed=0):
    """Uniform row sample across feature sets (or feature-file paths).

    Draws without replacement when enough rows exist, otherwise with
    replacement and a warning. Returns channel name -> (n, d) matrix.
    """
    if not sources:
        raise ValueError("no feature files to sample from")
    sets = [s if isinstance(s, FeatureSet) else load_feature_set(s) for s in sources]
    names = list(sets[0].channels)
    total = sum(len(s) for s in sets)
    if total == 0:
        raise ValueError("feature files contain no rows")
    rng = np.random.default_rng(seed)
    if n <= total:
        idx = rng.permutation(total)[:n]
    else:
        warnings.warn(f"requested {n} samples from {total} rows; sampling with replacement")
        idx = rng.integers(0, total, size=n)
    return {
        c: np.concatenate([s.channels[c] for s in sets]).astype(np.float64)[idx] for c in names
    }
