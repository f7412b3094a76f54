"""Temporal scale pyramid: union of features extracted at several strides."""

import math

from .features import concat_feature_sets
from .media_io import temporal_smooth, temporal_subsample

MAX_LEVEL = 5


def tsp_extract(clip, level, extractor, alpha=0.0):
    """Features of ``clip`` at strides 1..level+1, concatenated stride-major.

    Each stride's rows are tagged ``stride = v`` (stride v+1) and keep the
    t_norm their extractor computed against the subsampled clip. The
    returned set carries the original clip length and a processed-frame
    count equal to ``frame_cost(level, len(clip))``.
    """
    if int(level) != level or not 0 <= level <= MAX_LEVEL:
        raise ValueError(f"TSP level must be an integer in [0, {MAX_LEVEL}], got {level!r}")
    source = temporal_smooth(clip, alpha) if alpha else clip
    parts = []
    processed = 0
    for v in range(int(level) + 1):
        sub = temporal_subsample(source, v + 1)
        fs = extractor(sub)
        fs.locations["stride"] = v
        processed += len(sub)
        parts.append(fs)
    if level == 0:
        parts[0].processed_frames = processed
        return parts[0]
    out = concat_feature_sets(parts, len(clip))
    out.processed_frames = processed
    return out


def select_level(features, level):
    """Rows of a TSP union that belong to levels 0..level."""
    return features.select(features.locations["stride"] <= level)


def frame_cost(level, frame_count):
    """Frames processed by a level-``level`` pyramid over ``frame_count`` frames."""
    if level < 0 or frame_count < 1:
        raise ValueError("need level >= 0 and frame_count >= 1")
    return sum(math.ceil(frame_count / (v + 1)) for v in range(level + 1))
