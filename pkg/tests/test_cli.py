import hashlib
import logging

import pytest
import yaml

from tempaction.cli import ConfigError, load_config, main
from tempaction.features import load_feature_set
from tempaction.temporal_pyramid import frame_cost


def tiny_config(tmp_path, **sections):
    cfg = {
        "manifest": "data/manifest.tsv",
        "out": "run",
        "seed": 3,
        "synth": {"mode": "velocity", "classes": 2, "clips_per_class": 4, "resolution": [40, 40],
                  "base_length": 40, "n_groups": 2, "path_scale": [0.2, 0.25]},
        "fit": {"n_components": 2, "n_samples": 500},
    }
    for k, v in sections.items():
        cfg.setdefault(k, {}).update(v) if isinstance(v, dict) else cfg.update({k: v})
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def run(cfg, *stages):
    for s in stages:
        code = main([s, "--config", str(cfg)])
        if code:
            return code
    return 0


def digests(root):
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    cfg = tiny_config(tmp, extract={"tsp_level": 1})
    assert run(cfg, "synth", "extract", "fit", "encode", "train", "eval", "stats") == 0
    return tmp, cfg


def test_pipeline_artifacts(pipeline):
    tmp, _ = pipeline
    out = tmp / "run"
    for rel in ("models/pca.tpca", "models/gmm.tgmm", "models/svm.tsvm", "models/gmm_loglik.tsv",
                "reports/report.txt", "reports/tsvf.tsv", "features/processed_frames.tsv"):
        assert (out / rel).is_file(), rel
    assert len(list((out / "features").glob("*.tfea"))) == 8
    assert len(list((out / "encodings").glob("*.tenc"))) == 8
    report = (out / "reports/report.txt").read_text()
    assert "n_folds=2" in report


def test_processed_frame_counter(pipeline):
    tmp, _ = pipeline
    rows = (tmp / "run/features/processed_frames.tsv").read_text().splitlines()[1:-1]
    assert rows
    for row in rows:
        name, n, processed, expected = row.split("\t")
        assert int(processed) == int(expected) == frame_cost(1, int(n))
        fs = load_feature_set(tmp / "run/features" / name)
        assert fs.raw and fs.clip_frame_count == int(n)


def test_loglik_curve_non_decreasing(pipeline):
    tmp, _ = pipeline
    curves = {}
    for row in (tmp / "run/models/gmm_loglik.tsv").read_text().splitlines()[1:]:
        ch, _, v = row.split("\t")
        curves.setdefault(ch, []).append(float(v))
    assert sorted(curves) == ["hof", "hog", "mbh", "traj"]
    for v in curves.values():
        assert all(b >= a - 1e-9 for a, b in zip(v, v[1:]))


def test_reruns_are_byte_identical(pipeline, tmp_path):
    tmp, cfg = pipeline
    first = digests(tmp / "run")
    for i in range(2):
        out = tmp_path / f"again{i}"
        assert main(["extract", "--config", str(cfg), "--out", str(out)]) == 0
        for s in ("fit", "encode", "train", "eval", "stats"):
            assert main([s, "--config", str(cfg), "--out", str(out)]) == 0
        assert digests(out) == first


def test_ted_and_tdp_encoding_dimension(pipeline, tmp_path):
    tmp, cfg = pipeline
    out = tmp_path / "ted"
    c2 = tiny_config(tmp, extract={"tsp_level": 1, "ted": True},
                     encode={"tdp_level": 2, "tdp_mode": "pyramid"})
    for s in ("extract", "fit", "encode", "eval"):
        assert main([s, "--config", str(c2), "--out", str(out)]) == 0
    text = (out / "reports/report.txt").read_text()
    # 4 channels of projected dims 15/48/54/96 plus (x, y) and t, K = 2, 3 regions
    d = sum(2 * 2 * (k + 3) for k in (15, 48, 54, 96))
    assert f"dim={3 * d}" in text


def test_baseline_split_and_missing_baseline(pipeline, tmp_path, caplog):
    tmp, cfg = pipeline
    base = tmp / "run/reports/report.txt"
    c2 = tiny_config(tmp, eval={"baseline": str(base), "name": "again"})
    assert main(["eval", "--config", str(c2)]) == 0
    text = (tmp / "run/reports/again.txt").read_text()
    assert "baseline=report" in text and "n_improved=2" in text
    c3 = tiny_config(tmp, eval={"baseline": str(tmp_path / "nope.txt"), "name": "nobase"})
    with caplog.at_level(logging.WARNING):
        assert main(["eval", "--config", str(c3)]) == 0
    assert "improvement split omitted" in caplog.text
    assert "baseline=\n" in (tmp / "run/reports/nobase.txt").read_text()


def test_fixed_split(pipeline):
    tmp, _ = pipeline
    c2 = tiny_config(tmp, eval={"protocol": "fixed", "test_groups": ["g1"], "name": "fixed"})
    assert main(["eval", "--config", str(c2)]) == 0
    assert "fold=test:4:" in (tmp / "run/reports/fixed.txt").read_text()


def test_corrupt_feature_file_names_file(pipeline, tmp_path, caplog):
    tmp, cfg = pipeline
    out = tmp_path / "corrupt"
    assert main(["extract", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["fit", "--config", str(cfg), "--out", str(out)]) == 0
    victim = sorted((out / "features").glob("*.tfea"))[3]
    victim.write_bytes(victim.read_bytes()[:50])
    with caplog.at_level(logging.ERROR):
        assert main(["encode", "--config", str(cfg), "--out", str(out)]) == 1
    assert victim.name in caplog.text


def test_too_many_components_names_channel(pipeline, tmp_path, caplog):
    tmp, _ = pipeline
    c2 = tiny_config(tmp, extract={"tsp_level": 1}, fit={"n_components": 100000, "n_samples": 200000})
    with caplog.at_level(logging.ERROR):
        assert main(["fit", "--config", str(c2), "--out", str(tmp / "run")]) == 1
    assert "channel traj" in caplog.text


def test_unreadable_clip_exit_one(tmp_path, caplog):
    cfg = tiny_config(tmp_path)
    assert run(cfg, "synth") == 0
    clip = sorted((tmp_path / "data/clips").glob("*.vclp"))[0]
    clip.write_bytes(b"VCLPjunk")
    with caplog.at_level(logging.ERROR):
        assert main(["extract", "--config", str(cfg)]) == 1
    assert clip.name in caplog.text
    # the other clips were still extracted
    assert len(list((tmp_path / "run/features").glob("*.tfea"))) == 7


def test_config_errors_exit_two(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("extract: {tsp_level: 9}\n")
    assert main(["extract", "--config", str(bad)]) == 2
    bad.write_text("nonsense_key: 1\n")
    assert main(["stats", "--config", str(bad)]) == 2
    bad.write_text("extract: [1, 2\n")
    assert main(["stats", "--config", str(bad)]) == 2
    assert main(["stats", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["stats"]) == 2  # no manifest configured


def test_missing_manifest_exit_one(tmp_path):
    cfg = tiny_config(tmp_path)
    assert main(["stats", "--config", str(cfg)]) == 1


def test_config_paths_resolve_against_file(tmp_path):
    sub = tmp_path / "conf"
    sub.mkdir()
    cfg = load_config(tiny_config(sub))
    assert cfg["manifest"] == str(sub / "data/manifest.tsv")
    assert cfg["fit"]["n_components"] == 2
    assert cfg["fit"]["tol"] == 1e-5
    with pytest.raises(ConfigError):
        load_config(tiny_config(sub, encode={"tdp_level": 3}))


def test_sweep(tmp_path):
    cfg = tiny_config(tmp_path, sweep={"param": "encode.tdp_level", "values": [1, 2]})
    assert run(cfg, "synth", "sweep") == 0
    rows = (tmp_path / "run/reports/sweep.tsv").read_text().splitlines()
    assert len(rows) == 3
    second = (tmp_path / "run/sweep/tdp_level=2/reports/tdp_level=2.txt").read_text()
    assert "baseline=tdp_level=1" in second


@pytest.mark.parametrize("name", ["velocity.yaml", "order.yaml"])
def test_shipped_configs_load(name):
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / name
    cfg = load_config(path)
    assert cfg["fit"]["n_components"] == 16
    assert cfg["manifest"].endswith("manifest.tsv")
