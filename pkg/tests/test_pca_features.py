import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from tempaction.binfmt import FormatError
from tempaction.features import (
    FeatureSet,
    concat_feature_sets,
    empty_locations,
    extract_raw_features,
    load_feature_set,
    project_features,
    save_feature_set,
)
from tempaction.media_io import VideoClip, temporal_subsample
from tempaction.pca import PcaModel, fit_channel_pca, fit_pca
from tempaction.ted import ted_augment
from tempaction.temporal_pyramid import frame_cost, select_level, tsp_extract


def random_set(n=12, dims=None, seed=0, frames=40, raw=True):
    rng = np.random.default_rng(seed)
    dims = dims or {"traj": 30, "hog": 96, "hof": 108, "mbh": 192}
    locs = empty_locations(n)
    locs["x"] = rng.uniform(0, 1, n)
    locs["y"] = rng.uniform(0, 1, n)
    locs["frame"] = rng.integers(7, frames - 8, n)
    locs["t"] = locs["frame"] / frames
    return FeatureSet({k: rng.random((n, d)) for k, d in dims.items()}, locs, frames, raw=raw)


# -- PCA ------------------------------------------------------------------------


def test_pca_recovers_low_rank_subspace():
    rng = np.random.default_rng(0)
    basis = np.linalg.qr(rng.standard_normal((10, 3)))[0]
    x = rng.standard_normal((500, 3)) * [5.0, 3.0, 2.0] @ basis.T + 7.0
    ch = fit_channel_pca(x)
    assert ch.output_dim == 5
    # float32 storage bounds the reconstruction error
    np.testing.assert_allclose(ch.inverse_transform(ch.transform(x)), x, atol=1e-5 * np.abs(x).max())
    np.testing.assert_allclose(ch.explained_variance[3:], 0.0, atol=1e-5)


def test_pca_isotropic_variance():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((10000, 32))
    ch = fit_channel_pca(x)
    total = np.trace(np.cov(x.T, bias=True))
    assert abs(ch.explained_variance.sum() / total - 0.5) < 0.05


@given(st.integers(2, 24), st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_pca_axes_orthonormal_half_dim(d, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((d + 20, d)) @ rng.standard_normal((d, d))
    ch = fit_channel_pca(x)
    k = d // 2
    assert ch.projection.shape == (d, k)
    np.testing.assert_allclose(ch.projection.T @ ch.projection, np.eye(k), atol=1e-6)
    assert np.all(np.diff(ch.explained_variance) <= 1e-6 * (1 + ch.explained_variance[0]))
    pivot = np.argmax(np.abs(ch.projection), axis=0)
    assert np.all(ch.projection[pivot, np.arange(k)] > 0)


def test_pca_degenerate_input_warns():
    x = np.full((20, 6), 3.0)
    with pytest.warns(UserWarning, match="zero variance"):
        ch = fit_channel_pca(x)
    assert ch.degenerate
    np.testing.assert_array_equal(ch.projection, np.eye(6)[:, :3])
    np.testing.assert_array_equal(ch.transform(x), 0.0)


def test_pca_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_channel_pca(np.zeros((3, 8)))
    x = np.ones((20, 4))
    x[0, 0] = np.nan
    with pytest.raises(ValueError):
        fit_channel_pca(x)


def test_pca_file_roundtrip():
    fs = random_set(300)
    model = fit_pca(fs.channels)
    back = PcaModel.from_bytes(model.to_bytes())
    for name, ch in model.channels.items():
        np.testing.assert_array_equal(back[name].projection, ch.projection)
        np.testing.assert_array_equal(back[name].mean, ch.mean)
    assert back.to_bytes() == model.to_bytes()


# -- feature sets ---------------------------------------------------------------


def test_projection_and_ted_dimensions():
    fs = random_set(300)
    pca = fit_pca(fs.channels)
    proj = project_features(fs, pca)
    assert proj.dims == {"traj": 17, "hog": 50, "hof": 56, "mbh": 98}
    # last two columns are the normalized location
    np.testing.assert_allclose(proj.channels["hog"][:, -2], fs.locations["x"], rtol=1e-6)
    ted = ted_augment(proj)
    assert ted.dims == {k: v + 1 for k, v in proj.dims.items()}
    assert ted.ted_applied
    np.testing.assert_array_equal(ted.channels["traj"][:, -1], fs.locations["t"])
    with pytest.raises(ValueError):
        ted_augment(ted)
    with pytest.raises(ValueError):
        project_features(proj, pca)


@given(st.dictionaries(st.sampled_from(["a", "b", "c"]), st.integers(1, 9), min_size=1))
def test_ted_adds_one_per_channel(dims):
    fs = random_set(5, dims, raw=False)
    assert ted_augment(fs).dims == {k: d + 1 for k, d in dims.items()}


def test_feature_file_roundtrip(tmp_path):
    fs = random_set(9)
    path = tmp_path / "x.tfea"
    save_feature_set(fs, path)
    back = load_feature_set(path)
    assert back.equals(fs)
    assert back.raw and not back.ted_applied
    assert path.read_bytes()[:4] == b"TFEA"


def test_feature_file_errors(tmp_path):
    data = random_set(4).to_bytes()
    (tmp_path / "short.tfea").write_bytes(data[:-3])
    with pytest.raises(FormatError, match="short.tfea"):
        load_feature_set(tmp_path / "short.tfea")
    (tmp_path / "long.tfea").write_bytes(data + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        load_feature_set(tmp_path / "long.tfea")


def test_rows_must_align():
    locs = empty_locations(3)
    with pytest.raises(ValueError):
        FeatureSet({"a": np.zeros((2, 4))}, locs, 10)


def test_concat_rejects_mixed_stages():
    a = random_set(3, {"a": 2})
    b = random_set(3, {"a": 2}, raw=False)
    with pytest.raises(ValueError):
        concat_feature_sets([a, b], 40)


# -- temporal scale pyramid ---------------------------------------------------


def moving_texture(n=40, h=40, w=40, seed=2):
    rng = np.random.default_rng(seed)
    big = 128 + 300 * ndimage.gaussian_filter(rng.standard_normal((h + 2 * n, w + 2 * n)), 1.5)
    frames = [big[n : n + h, n - t : n - t + w] for t in range(n)]
    return VideoClip(np.clip(frames, 0, 255))


def test_tsp_level_zero_is_plain_extraction():
    clip = moving_texture()
    plain = extract_raw_features(clip)
    lv0 = tsp_extract(clip, 0, extract_raw_features)
    assert lv0.to_bytes() == plain.to_bytes()
    assert lv0.processed_frames == len(clip)


def test_tsp_union_is_stride_concatenation():
    clip = moving_texture(48)
    union = tsp_extract(clip, 2, extract_raw_features)
    parts = []
    for v in range(3):
        fs = extract_raw_features(temporal_subsample(clip, v + 1))
        fs.locations["stride"] = v
        parts.append(fs)
    manual = concat_feature_sets(parts, len(clip))
    assert union.to_bytes() == manual.to_bytes()
    assert union.processed_frames == 48 + 24 + 16
    assert select_level(union, 0).to_bytes() == parts[0].to_bytes()
    # t_norm of every stride is measured against its own subsampled clip
    assert np.all(union.t_norm <= 1)


def test_tsp_level_validation():
    clip = moving_texture(20)
    for bad in (-1, 6, 1.5):
        with pytest.raises(ValueError):
            tsp_extract(clip, bad, extract_raw_features)


@given(st.integers(16, 2000))
def test_frame_cost_law(t):
    cost = frame_cost(2, t)
    assert cost == t + -(-t // 2) + -(-t // 3)
    assert cost <= 2 * t


def test_tsp_counts_processed_frames():
    def stub(clip):
        fs = random_set(0, {"a": 2}, frames=len(clip))
        fs.processed_frames = len(clip)
        return fs

    for t in (16, 17, 31, 100):
        clip = VideoClip(np.zeros((t, 2, 2), np.uint8))
        assert tsp_extract(clip, 2, stub).processed_frames == frame_cost(2, t)
