"""Temporal scale pyramids, temporal extension descriptors and temporal
division pyramids over a dense-trajectory / Fisher-vector / linear-SVM
action-recognition pipeline."""

from .features import FeatureSet, build_feature_set, extract_raw_features, project_features
from .fisher import Encoding, fisher_encode, normalize
from .gmm import GmmCodebook, fit_gmm
from .media_io import (
    DatasetManifest,
    VideoClip,
    load_frame_sequence,
    temporal_smooth,
    temporal_subsample,
)
from .metrics import EvalReport, average_precision, improvement_split, mtsvf, tsvf
from .pca import PcaModel, fit_pca
from .svm import LinearModel, train_one_vs_all
from .synth import SynthSpec, generate_synthetic_dataset
from .ted import ted_augment
from .temporal_division import tdp_encode
from .temporal_pyramid import frame_cost, tsp_extract
from .trajectories import TrackParams, compute_descriptors, extract_trajectories

__version__ = "0.1.0"
