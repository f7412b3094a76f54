"""Command-line pipeline: synth -> extract -> fit -> encode -> train/eval.

Every stage reads one YAML config and writes its artifacts under ``out``:

    features/<clip>.tfea        FeatureSet per clip (raw unless extract.pca is set)
    features/processed_frames.tsv
    models/pca.tpca, models/gmm.tgmm, models/gmm_loglik.tsv, models/svm.tsvm
    encodings/<clip>.tenc
    reports/<name>.txt

Exit codes: 0 success, 1 data error, 2 config error.
"""

import argparse
import copy
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from functools import partial
from pathlib import Path

import numpy as np
import yaml

from .binfmt import FormatError
from .evaluation import evaluate_split, leave_one_group_out
from .features import (
    FeatureSet,
    extract_raw_features,
    project_features,
    save_feature_set,
)
from .fisher import Encoding, sample_descriptors
from .gmm import GmmCodebook, fit_gmm
from .media_io import ClipError, atomic_write, load_frame_sequence, read_manifest
from .metrics import EvalReport, improvement_split, mtsvf
from .pca import PcaModel, fit_pca
from .svm import train_one_vs_all
from .synth import SynthSpec, generate_synthetic_dataset
from .ted import ted_augment
from .temporal_division import tdp_encode
from .temporal_pyramid import frame_cost, tsp_extract
from .trajectories import TrackParams

log = logging.getLogger("tempaction")


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


DEFAULTS = {
    "manifest": None,
    "out": "run",
    "seed": 0,
    "workers": 1,
    # every SynthSpec field, so configs can override any of them
    "synth": {
        k: list(v) if isinstance(v, tuple) else v
        for k, v in asdict(SynthSpec(base_length=64)).items()
    },
    "extract": {"tsp_level": 0, "alpha": 0.0, "ted": False, "pca": None, "track": {}},
    "fit": {"n_components": 256, "n_samples": 256000, "tol": 1e-5, "max_iter": 200},
    "encode": {"tdp_level": 1, "tdp_mode": "single", "region_norm": True},
    "train": {"C": 100.0, "tol": 1e-4},
    "eval": {
        "protocol": "logo",
        "test_groups": [],
        "metric": None,
        "name": "report",
        "baseline": None,
    },
    "sweep": {"param": "extract.tsp_level", "values": [0, 1, 2]},
}


# -- config --------------------------------------------------------------------


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and k != "track":
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path + k!r} must be a mapping")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=None):
    """Defaults <- YAML file <- command-line overrides; relative paths resolve
    against the config file's directory."""
    raw = {}
    base_dir = Path.cwd()
    if path:
        try:
            with open(path, encoding="utf-8") as f:
                raw = yaml.safe_load(f) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping")
        base_dir = Path(path).resolve().parent
    cfg = _merge(DEFAULTS, raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    for key in ("manifest", "out"):
        if cfg[key] is not None:
            cfg[key] = str(base_dir / cfg[key])
    for sect, key in (("extract", "pca"), ("eval", "baseline")):
        if cfg[sect][key] is not None:
            cfg[sect][key] = str(base_dir / cfg[sect][key])
    _validate(cfg)
    return cfg


def _validate(cfg):
    ex, en, ev = cfg["extract"], cfg["encode"], cfg["eval"]
    if not isinstance(ex["tsp_level"], int) or not 0 <= ex["tsp_level"] <= 5:
        raise ConfigError("extract.tsp_level must be an integer in [0, 5]")
    if float(ex["alpha"]) < 0:
        raise ConfigError("extract.alpha must be non-negative")
    if en["tdp_level"] not in (1, 2, 4, 8):
        raise ConfigError("encode.tdp_level must be one of 1, 2, 4, 8")
    if en["tdp_mode"] not in ("single", "pyramid"):
        raise ConfigError("encode.tdp_mode must be 'single' or 'pyramid'")
    if ev["protocol"] not in ("logo", "fixed"):
        raise ConfigError("eval.protocol must be 'logo' or 'fixed'")
    if ev["protocol"] == "fixed" and not ev["test_groups"]:
        raise ConfigError("fixed-split protocol needs eval.test_groups")
    if int(cfg["workers"]) < 1:
        raise ConfigError("workers must be >= 1")
    if int(cfg["fit"]["n_components"]) < 1:
        raise ConfigError("fit.n_components must be >= 1")
    try:
        track_params(cfg)
    except TypeError as e:
        raise ConfigError(f"extract.track: {e}") from e


def track_params(cfg):
    return TrackParams(**cfg["extract"]["track"])


# -- paths ---------------------------------------------------------------------


def _manifest(cfg):
    if not cfg["manifest"]:
        raise ConfigError("no manifest given")
    try:
        return read_manifest(cfg["manifest"])
    except OSError as e:
        raise DataError(f"cannot read manifest: {e}") from e
    except ValueError as e:
        raise DataError(str(e)) from e


def clip_key(i, entry):
    stem = Path(entry.clip_path).name.split(".")[0]
    return f"{i:05d}_{stem}"


def _out(cfg, *parts):
    return Path(cfg["out"]).joinpath(*parts)


def feature_path(cfg, i, entry):
    return _out(cfg, "features", clip_key(i, entry) + ".tfea")


def encoding_path(cfg, i, entry):
    return _out(cfg, "encodings", clip_key(i, entry) + ".tenc")


def _read(path, loader, what):
    try:
        with open(path, "rb") as f:
            return loader(f.read(), str(path))
    except FileNotFoundError as e:
        raise DataError(f"missing {what}: {path}") from e
    except (FormatError, ValueError) as e:
        raise DataError(f"corrupt {what} {path}: {e}") from e


# -- stages --------------------------------------------------------------------


def run_synth(cfg):
    s = dict(cfg["synth"])
    try:
        spec = SynthSpec(**s)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"synth: {e}") from e
    out = _out(cfg, "synth")
    if cfg["manifest"]:
        if Path(cfg["manifest"]).name != "manifest.tsv":
            raise ConfigError("synth writes 'manifest.tsv'; point manifest at that name")
        out = Path(cfg["manifest"]).parent
    manifest = generate_synthetic_dataset(spec, cfg["seed"], out)
    log.info("wrote %d clips to %s", len(manifest.entries), out)
    return manifest


def _extract_one(job, tsp_level, alpha, ted, params, pca):
    src, dst = job
    try:
        clip = load_frame_sequence(src)
        fs = tsp_extract(clip, tsp_level, partial(extract_raw_features, params=params), alpha)
        if pca is not None:
            fs = project_features(fs, pca)
            if ted:
                fs = ted_augment(fs)
        save_feature_set(fs, dst)
        return len(clip), fs.processed_frames, None
    except (ClipError, OSError, ValueError) as e:
        return 0, 0, f"{src}: {e}"


def run_extract(cfg):
    """Extract one feature file per clip; returns the total processed-frame count."""
    manifest = _manifest(cfg)
    base = Path(cfg["manifest"]).parent
    ex = cfg["extract"]
    pca = _read(ex["pca"], PcaModel.from_bytes, "PCA model") if ex["pca"] else None
    jobs = [
        (manifest.resolve(e, base), feature_path(cfg, i, e)) for i, e in enumerate(manifest.entries)
    ]
    _out(cfg, "features").mkdir(parents=True, exist_ok=True)
    fn = partial(
        _extract_one,
        tsp_level=ex["tsp_level"],
        alpha=float(ex["alpha"]),
        ted=bool(ex["ted"]),
        params=track_params(cfg),
        pca=pca,
    )
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(cfg["workers"]) as pool:
            results = list(pool.map(fn, jobs))
    else:
        results = [fn(j) for j in jobs]

    lines = ["clip\tframes\tprocessed\texpected"]
    failed = 0
    total = 0
    for (src, dst), (n, processed, err) in zip(jobs, results):
        if err:
            log.error("extraction failed: %s", err)
            failed += 1
            continue
        total += processed
        lines.append(f"{dst.name}\t{n}\t{processed}\t{frame_cost(ex['tsp_level'], n)}")
    lines.append(f"total\t\t{total}\t")
    atomic_write(_out(cfg, "features", "processed_frames.tsv"), "\n".join(lines) + "\n")
    log.info("processed %d frames over %d clips", total, len(jobs) - failed)
    if failed:
        raise DataError(f"{failed} clip(s) failed extraction")
    return total


def _load_features(cfg, manifest):
    return [
        _read(feature_path(cfg, i, e), FeatureSet.from_bytes, "feature file")
        for i, e in enumerate(manifest.entries)
    ]


def _prepare(fs, pca, ted):
    """Bring a stored feature set to the projected (+TED) form used for coding."""
    if fs.raw:
        if pca is None:
            raise DataError("raw feature files need a PCA model")
        fs = project_features(fs, pca)
    if ted and not fs.ted_applied:
        fs = ted_augment(fs)
    if fs.ted_applied != bool(ted):
        raise ConfigError("feature files carry a temporal column but extract.ted is off")
    return fs


def run_fit(cfg):
    manifest = _manifest(cfg)
    sets = _load_features(cfg, manifest)
    fit, seed = cfg["fit"], int(cfg["seed"])
    n = int(fit["n_samples"])
    ex = cfg["extract"]
    if ex["pca"]:
        pca = _read(ex["pca"], PcaModel.from_bytes, "PCA model")
    else:
        if not all(fs.raw for fs in sets):
            raise DataError("fitting PCA needs raw feature files (extract without extract.pca)")
        try:
            pca = fit_pca(sample_descriptors(sets, n, seed))
        except ValueError as e:
            raise DataError(f"PCA fit failed: {e}") from e
    projected = [_prepare(fs, pca, ex["ted"]) for fs in sets]
    sample = sample_descriptors(projected, n, seed + 1)
    models = {}
    curve = ["channel\titeration\tlog_likelihood"]
    # sampling falls back to replacement, so count distinct source rows
    available = min(n, sum(len(fs) for fs in projected))
    for j, (name, x) in enumerate(sample.items()):
        if int(fit["n_components"]) > available:
            raise DataError(
                f"channel {name}: {fit['n_components']} components but only "
                f"{available} sampled rows"
            )
        g = fit_gmm(x, fit["n_components"], seed=seed + 2 + j, tol=fit["tol"], max_iter=fit["max_iter"])
        models[name] = g
        curve += [f"{name}\t{i}\t{v!r}" for i, v in enumerate(g.log_likelihood)]
        log.info("channel %s: %d EM iterations, ll %.4f", name, len(g.log_likelihood), g.log_likelihood[-1])
    codebook = GmmCodebook(models)
    _out(cfg, "models").mkdir(parents=True, exist_ok=True)
    atomic_write(_out(cfg, "models", "pca.tpca"), pca.to_bytes())
    atomic_write(_out(cfg, "models", "gmm.tgmm"), codebook.to_bytes())
    atomic_write(_out(cfg, "models", "gmm_loglik.tsv"), "\n".join(curve) + "\n")
    return pca, codebook


def _encode_one(job, pca, codebook, ted, level, mode, region_norm):
    src, dst = job
    fs = _prepare(_read(src, FeatureSet.from_bytes, "feature file"), pca, ted)
    enc = tdp_encode(fs, codebook, level, mode, region_norm=region_norm)
    atomic_write(dst, enc.to_bytes())
    return len(enc)


def run_encode(cfg):
    manifest = _manifest(cfg)
    pca_path = cfg["extract"]["pca"] or _out(cfg, "models", "pca.tpca")
    pca = _read(pca_path, PcaModel.from_bytes, "PCA model")
    codebook = _read(_out(cfg, "models", "gmm.tgmm"), GmmCodebook.from_bytes, "codebook")
    en = cfg["encode"]
    jobs = [
        (feature_path(cfg, i, e), encoding_path(cfg, i, e)) for i, e in enumerate(manifest.entries)
    ]
    _out(cfg, "encodings").mkdir(parents=True, exist_ok=True)
    fn = partial(
        _encode_one,
        pca=pca,
        codebook=codebook,
        ted=bool(cfg["extract"]["ted"]),
        level=en["tdp_level"],
        mode=en["tdp_mode"],
        region_norm=bool(en["region_norm"]),
    )
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(cfg["workers"]) as pool:
            dims = list(pool.map(fn, jobs))
    else:
        dims = [fn(j) for j in jobs]
    log.info("encoded %d clips, dimension %d", len(dims), dims[0] if dims else 0)
    return dims


def _load_encodings(cfg, manifest):
    encs = [
        _read(encoding_path(cfg, i, e), Encoding.from_bytes, "encoding")
        for i, e in enumerate(manifest.entries)
    ]
    if len({len(e) for e in encs}) > 1:
        raise DataError("encodings have different dimensions")
    return np.stack([e.vector for e in encs]).astype(np.float64)


def _split(cfg, manifest):
    test_groups = set(map(str, cfg["eval"]["test_groups"]))
    unknown = test_groups - set(manifest.groups)
    if unknown:
        raise DataError(f"test groups not in manifest: {sorted(unknown)}")
    test = [i for i, e in enumerate(manifest.entries) if e.group in test_groups]
    train = [i for i, e in enumerate(manifest.entries) if e.group not in test_groups]
    return train, test


def run_train(cfg):
    """Fit one-vs-all SVMs on the training clips (all clips under LOGO)."""
    manifest = _manifest(cfg)
    x = _load_encodings(cfg, manifest)
    labels = manifest.labels
    idx = _split(cfg, manifest)[0] if cfg["eval"]["protocol"] == "fixed" else range(len(labels))
    idx = list(idx)
    model = train_one_vs_all(
        x[idx], [labels[i] for i in idx], C=cfg["train"]["C"], tol=cfg["train"]["tol"], seed=cfg["seed"]
    )
    _out(cfg, "models").mkdir(parents=True, exist_ok=True)
    atomic_write(_out(cfg, "models", "svm.tsvm"), model.to_bytes())
    return model


def run_eval(cfg):
    manifest = _manifest(cfg)
    x = _load_encodings(cfg, manifest)
    ev = cfg["eval"]
    metric = ev["metric"] or manifest.metric
    kw = dict(C=cfg["train"]["C"], seed=cfg["seed"], metric=metric, name=ev["name"])
    if ev["protocol"] == "fixed":
        train, test = _split(cfg, manifest)
        if not train or not test:
            raise DataError("fixed split leaves an empty train or test set")
        report = evaluate_split(x, manifest.labels, train, test, **kw)
    else:
        try:
            report = leave_one_group_out(x, manifest.labels, [e.group for e in manifest.entries], **kw)
        except ValueError as e:
            raise DataError(str(e)) from e
    report.extra["dim"] = x.shape[1]
    _attach_tsvf(report, manifest)
    if ev["baseline"]:
        _attach_baseline(report, ev["baseline"], manifest)
    _out(cfg, "reports").mkdir(parents=True, exist_ok=True)
    atomic_write(_out(cfg, "reports", f"{ev['name']}.txt"), report.format())
    log.info("%s: mean %s %.4f", ev["name"], metric, report.mean_metric)
    return report


def _attach_tsvf(report, manifest):
    try:
        _, per = mtsvf(manifest)
    except ValueError as e:
        log.warning("TSVF unavailable: %s", e)
        return
    report.tsvf = {c: per[c] for c in report.classes if c in per}


def _attach_baseline(report, path, manifest):
    try:
        with open(path, encoding="utf-8") as f:
            base = EvalReport.parse(f.read())
        split = improvement_split(base, report, manifest, report.metric)
    except (OSError, ValueError) as e:
        log.warning("improvement split omitted: %s", e)
        return
    report.baseline = Path(path).stem
    report.delta = split["delta"]
    for k in ("n_improved", "n_hurt", "mtsvf_improved", "mtsvf_hurt"):
        report.extra[k] = "" if split[k] is None else split[k]


def run_stats(cfg):
    manifest = _manifest(cfg)
    try:
        m, per = mtsvf(manifest)
    except ValueError as e:
        raise DataError(str(e)) from e
    lines = ["class\ttsvf"] + [f"{c}\t{v!r}" for c, v in per.items()] + [f"mean\t{m!r}"]
    text = "\n".join(lines) + "\n"
    _out(cfg, "reports").mkdir(parents=True, exist_ok=True)
    atomic_write(_out(cfg, "reports", "tsvf.tsv"), text)
    print(text, end="")
    return m, per


def _set(cfg, dotted, value):
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            raise ConfigError(f"unknown sweep parameter {dotted!r}")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown sweep parameter {dotted!r}")
    node[keys[-1]] = value


def run_sweep(cfg):
    """Full extract/fit/encode/eval per sweep value, each in its own subdirectory.

    Reports after the first are split against the first value's report.
    """
    sw = cfg["sweep"]
    if not sw["values"]:
        raise ConfigError("sweep.values is empty")
    reports = []
    first = None
    for v in sw["values"]:
        sub = copy.deepcopy(cfg)
        _set(sub, sw["param"], v)
        tag = f"{sw['param'].split('.')[-1]}={v}"
        sub["out"] = str(_out(cfg, "sweep", tag))
        sub["eval"]["name"] = tag
        sub["eval"]["baseline"] = first
        _validate(sub)
        run_extract(sub)
        run_fit(sub)
        run_encode(sub)
        rep = run_eval(sub)
        if first is None:
            first = str(_out(sub, "reports", f"{tag}.txt"))
        reports.append(rep)
    lines = ["value\tmean_accuracy\tmean_ap\tdim"] + [
        f"{v}\t{r.mean_accuracy!r}\t{r.mean_ap!r}\t{r.extra['dim']}" for v, r in zip(sw["values"], reports)
    ]
    atomic_write(_out(cfg, "reports", "sweep.tsv"), "\n".join(lines) + "\n")
    return reports


STAGES = {
    "synth": run_synth,
    "extract": run_extract,
    "fit": run_fit,
    "encode": run_encode,
    "train": run_train,
    "eval": run_eval,
    "stats": run_stats,
    "sweep": run_sweep,
}


def build_parser():
    p = argparse.ArgumentParser(prog="tempaction", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=sorted(STAGES))
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="artifact directory")
    p.add_argument("--manifest", help="dataset manifest (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        overrides = {"seed": args.seed, "workers": args.workers}
        cfg = load_config(args.config, overrides)
        # paths given on the command line are relative to the working directory
        if args.out:
            cfg["out"] = str(Path(args.out).resolve())
        if args.manifest:
            cfg["manifest"] = str(Path(args.manifest).resolve())
        STAGES[args.command](cfg)
    except ConfigError as e:
        log.error("config error: %s", e)
        return 2
    except (DataError, ClipError, FormatError) as e:
        log.error("data error: %s", e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
