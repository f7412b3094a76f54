"""Per-channel PCA to half dimension, with a reproducible sign convention."""

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .binfmt import Reader, pack_name

PCA_MAGIC = b"TPCA"


@dataclass
class ChannelPca:
    mean: np.ndarray  # (d,)
    projection: np.ndarray  # (d, d // 2), orthonormal columns
    explained_variance: np.ndarray  # (d // 2,)
    degenerate: bool = False

    @property
    def input_dim(self):
        return self.projection.shape[0]

    @property
    def output_dim(self):
        return self.projection.shape[1]

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.projection

    def inverse_transform(self, z):
        return np.asarray(z, dtype=np.float64) @ self.projection.T + self.mean


@dataclass
class PcaModel:
    channels: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.channels[name]

    def to_bytes(self):
        out = [PCA_MAGIC, struct.pack("<I", len(self.channels))]
        for name, ch in self.channels.items():
            out.append(pack_name(name))
            out.append(struct.pack("<IIB", ch.input_dim, ch.output_dim, int(ch.degenerate)))
            out.append(ch.mean.astype("<f4").tobytes())
            out.append(ch.projection.astype("<f4").tobytes())
            out.append(ch.explained_variance.astype("<f4").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data, source=""):
        r = Reader(data, source)
        r.magic(PCA_MAGIC)
        (n,) = r.unpack("<I")
        channels = {}
        for _ in range(n):
            name = r.name()
            d, k, flag = r.unpack("<IIB")
            mean = r.array("<f4", d).astype(np.float64)
            proj = r.array("<f4", d * k).astype(np.float64).reshape(d, k)
            ev = r.array("<f4", k).astype(np.float64)
            channels[name] = ChannelPca(mean, proj, ev, bool(flag))
        return cls(channels)


def _f32(a):
    # keep in-memory models identical to their float32 file form
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def fit_channel_pca(x):
    """Principal axes of ``x`` (n, d), keeping the top floor(d/2).

    Each column's largest-magnitude entry is made positive. Constant data
    yields zero eigenvalues, identity axes and ``degenerate=True``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a 2-D sample matrix")
    n, d = x.shape
    if n < d:
        raise ValueError(f"PCA needs at least {d} samples, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in PCA input")
    k = d // 2
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / n
    if not np.any(cov):
        warnings.warn("PCA input has zero variance; returning identity axes")
        return ChannelPca(_f32(mean), np.eye(d)[:, :k], np.zeros(k), degenerate=True)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:k]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    pivot = np.argmax(np.abs(evecs), axis=0)
    signs = np.sign(evecs[pivot, np.arange(k)])
    signs[signs == 0] = 1.0
    return ChannelPca(_f32(mean), _f32(evecs * signs), _f32(evals))


def fit_pca(samples):
    """Fit one half-dimension PCA per channel of ``samples`` (name -> matrix)."""
    return PcaModel({name: fit_channel_pca(x) for name, x in samples.items()})
