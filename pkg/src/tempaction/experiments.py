"""In-memory end-to-end runs used by the level sweeps and acceptance checks.

Raw features are extracted once per clip at the highest TSP level needed;
lower levels are row subsets of that union (selected by stride tag), which
is bitwise the same as extracting them separately.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .evaluation import leave_one_group_out
from .features import extract_raw_features, project_features
from .fisher import sample_descriptors
from .gmm import GmmCodebook, fit_gmm
from .media_io import DatasetManifest, ManifestEntry
from .metrics import improvement_split
from .pca import fit_pca
from .synth import synthesize
from .ted import ted_augment
from .temporal_division import tdp_encode
from .temporal_pyramid import select_level, tsp_extract
from .trajectories import TrackParams

log = logging.getLogger(__name__)


@dataclass
class EncodeConfig:
    tsp_level: int = 0
    ted: bool = False
    tdp_level: int = 1
    tdp_mode: str = "single"
    n_components: int = 16
    n_samples: int = 20000
    seed: int = 0
    C: float = 100.0


@dataclass
class Corpus:
    raw: list  # raw FeatureSets (TSP union at max level)
    labels: list
    groups: list
    durations: list
    meta: dict = field(default_factory=dict)

    def manifest(self):
        entries = [
            ManifestEntry(f"clip{i:04d}", lab, grp, dur)
            for i, (lab, grp, dur) in enumerate(zip(self.labels, self.groups, self.durations))
        ]
        return DatasetManifest(entries, {"metric": "accuracy"})


def _extract(clip, level, params):
    return tsp_extract(clip, level, partial(extract_raw_features, params=params))


def build_corpus(spec, seed, max_level=0, params=TrackParams(), workers=1):
    clips, labels, groups, durations = [], [], [], []
    for clip, label, group, duration, _ in synthesize(spec, seed):
        clips.append(clip)
        labels.append(label)
        groups.append(group)
        durations.append(duration)
    fn = partial(_extract, level=max_level, params=params)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            raw = list(pool.map(fn, clips, chunksize=4))
    else:
        raw = [fn(c) for c in clips]
    return Corpus(raw, labels, groups, durations, {"spec": spec, "seed": seed})


def fit_codebooks(feature_sets, cfg):
    """PCA on raw rows, then one GMM per projected (and optionally TED) channel."""
    raw_sample = sample_descriptors(feature_sets, cfg.n_samples, cfg.seed)
    pca = fit_pca(raw_sample)
    projected = [project_features(fs, pca) for fs in feature_sets]
    if cfg.ted:
        projected = [ted_augment(fs) for fs in projected]
    sample = sample_descriptors(projected, cfg.n_samples, cfg.seed + 1)
    gmm = GmmCodebook(
        {
            name: fit_gmm(x, cfg.n_components, seed=cfg.seed + 2 + j)
            for j, (name, x) in enumerate(sample.items())
        }
    )
    return pca, gmm, projected


def encode_corpus(corpus, cfg):
    sets = [select_level(fs, cfg.tsp_level) for fs in corpus.raw]
    pca, gmm, projected = fit_codebooks(sets, cfg)
    x = np.stack([tdp_encode(fs, gmm, cfg.tdp_level, cfg.tdp_mode).vector for fs in projected])
    return x, {"pca": pca, "gmm": gmm}


def evaluate_config(corpus, cfg, name=""):
    x, models = encode_corpus(corpus, cfg)
    report = leave_one_group_out(x, corpus.labels, corpus.groups, C=cfg.C, seed=cfg.seed, name=name)
    report.extra["dim"] = x.shape[1]
    return report


def order_experiment(spec, seed=0, cfg=None, params=TrackParams(), workers=1):
    """Baseline vs. TED vs. TDP-2 on an order-mode corpus."""
    cfg = cfg or EncodeConfig(seed=seed)
    corpus = build_corpus(spec, seed, 0, params, workers)
    runs = {
        "baseline": EncodeConfig(**{**cfg.__dict__, "ted": False, "tdp_level": 1}),
        "ted": EncodeConfig(**{**cfg.__dict__, "ted": True, "tdp_level": 1}),
        "tdp2": EncodeConfig(**{**cfg.__dict__, "ted": False, "tdp_level": 2}),
    }
    return {k: evaluate_config(corpus, c, name=k) for k, c in runs.items()}


def velocity_experiment(spec, seed=0, levels=(0, 2), cfg=None, params=TrackParams(), workers=1):
    """TSP level sweep on a velocity-mode corpus; one report per level."""
    cfg = cfg or EncodeConfig(seed=seed)
    corpus = build_corpus(spec, seed, max(levels), params, workers)
    reports = {}
    for lv in levels:
        c = EncodeConfig(**{**cfg.__dict__, "tsp_level": lv})
        reports[lv] = evaluate_config(corpus, c, name=f"tsp{lv}")
    base = reports[min(levels)]
    split = improvement_split(base, reports[max(levels)], corpus.manifest())
    return reports, split, corpus
