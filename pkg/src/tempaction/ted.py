"""Temporal extension descriptor: one normalized-time column per channel."""

from dataclasses import replace

import numpy as np


def ted_augment(features):
    """Append each row's t_norm as the last column of every channel."""
    if features.ted_applied:
        raise ValueError("temporal extension already applied to this feature set")
    if features.locations is None or "t" not in (features.locations.dtype.names or ()):
        raise ValueError("feature set has no temporal locations")
    t = features.locations["t"].astype(np.float32)[:, None]
    channels = {k: np.concatenate([v, t], axis=1) for k, v in features.channels.items()}
    return replace(features, channels=channels, ted_applied=True)
