"""Temporal division pyramid: per-region Fisher vectors, concatenated."""

import numpy as np

from .fisher import (
    Block,
    Encoding,
    concatenate_encodings,
    encode_channels,
    fisher_encode,
    normalize,
)

DIVISIONS = (1, 2, 4, 8)


def _check(n):
    if n not in DIVISIONS:
        raise ValueError(f"divisions must be one of {DIVISIONS}, got {n!r}")


def region_index(t_norm, n):
    """Region of each t_norm under [i/n, (i+1)/n) bins, the last closed at 1."""
    _check(n)
    t = np.asarray(t_norm, dtype=np.float64)
    return np.minimum(np.floor(t * n).astype(np.int64), n - 1)


def partition_features(features, divisions):
    """Split a feature set into ``divisions`` temporal regions."""
    _check(divisions)
    if divisions == 1:
        return [features]
    reg = region_index(features.t_norm, divisions)
    return [features.select(np.flatnonzero(reg == i)) for i in range(divisions)]


def _single(features, codebook, n, order):
    encs = []
    for i, part in enumerate(partition_features(features, n)):
        enc = encode_channels(part, codebook, order)
        encs.append(
            Encoding(enc.vector, [Block(b.channel, n, i, b.offset, b.length) for b in enc.layout])
        )
    return concatenate_encodings(encs)


def pyramid_levels(level):
    _check(level)
    return [n for n in DIVISIONS if n <= level]


def tdp_encode(features, codebook, level=1, mode="single", order=None, region_norm=True):
    """Encode a feature set as a single-level or pyramid temporal division.

    ``single`` yields level * D values (regions in temporal order);
    ``pyramid`` concatenates the single encodings of 1, 2, ..., level,
    giving (2 * level - 1) * D. With ``region_norm=False`` every channel
    block is left unnormalized per region and the whole vector is power+L2
    normalized once instead.
    """
    _check(level)
    if mode not in ("single", "pyramid"):
        raise ValueError(f"unknown TDP mode {mode!r}")
    levels = [level] if mode == "single" else pyramid_levels(level)
    if region_norm:
        return concatenate_encodings([_single(features, codebook, n, order) for n in levels])
    order = tuple(order or codebook.channels)
    layout = []
    pieces = []
    offset = 0
    for n in levels:
        for i, part in enumerate(partition_features(features, n)):
            for c in order:
                fv = fisher_encode(part.channels[c], codebook[c])
                layout.append(Block(c, n, i, offset, len(fv)))
                pieces.append(fv)
                offset += len(fv)
    return Encoding(normalize(np.concatenate(pieces)), layout)
