"""Accuracy / average precision, duration statistics and evaluation reports."""

import math
from dataclasses import dataclass, field

import numpy as np


def mean_class_accuracy(predictions, labels, classes=None):
    """Unweighted mean of per-class accuracies. Returns (mAcc, {class: acc})."""
    predictions = list(predictions)
    labels = list(labels)
    if not labels:
        raise ValueError("no predictions to score")
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    classes = sorted(set(labels)) if classes is None else list(classes)
    per = {}
    for c in classes:
        idx = [i for i, l in enumerate(labels) if l == c]
        if not idx:
            raise ValueError(f"class {c!r} has no test instances")
        per[c] = sum(predictions[i] == c for i in idx) / len(idx)
    return float(np.mean(list(per.values()))), per


def average_precision(scores, positives):
    """Mean of precision@rank over the positive ranks (descending, stable)."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("average precision is undefined without positives")
    order = np.argsort(-scores, kind="stable")
    hits = pos[order]
    ranks = np.flatnonzero(hits) + 1
    # fsum keeps the result independent of summation order
    return math.fsum(np.arange(1, n_pos + 1) / ranks) / n_pos


def mean_average_precision(scores, positives):
    """Per-class AP over the columns of (n, n_classes) score/label matrices."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape:
        raise ValueError("scores and labels have different shapes")
    aps = [average_precision(scores[:, j], positives[:, j]) for j in range(scores.shape[1])]
    return float(np.mean(aps)), aps


def tsvf(durations):
    """Population standard deviation of durations over their mean."""
    d = np.asarray(durations, dtype=np.float64)
    if len(d) < 2:
        raise ValueError("temporal scale variation needs at least two clips")
    if np.any(d <= 0):
        raise ValueError("durations must be positive")
    mean = d.mean()
    if mean == 0:
        raise ValueError("zero mean duration")
    return float(d.std() / mean)


def mtsvf(manifest):
    """Mean per-class TSVF of a manifest. Returns (mTSVF, {class: TSVF})."""
    per = {c: tsvf(d) for c, d in sorted(manifest.durations_by_class().items())}
    return float(np.mean(list(per.values()))), per


@dataclass
class EvalReport:
    classes: list
    per_class_accuracy: dict
    per_class_ap: dict
    metric: str = "accuracy"
    name: str = ""
    folds: list = field(default_factory=list)
    delta: dict = field(default_factory=dict)
    tsvf: dict = field(default_factory=dict)
    baseline: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def mean_accuracy(self):
        return float(np.mean([self.per_class_accuracy[c] for c in self.classes]))

    @property
    def mean_ap(self):
        return float(np.mean([self.per_class_ap[c] for c in self.classes]))

    def per_class(self, metric=None):
        metric = metric or self.metric
        if metric == "accuracy":
            return self.per_class_accuracy
        if metric == "ap":
            return self.per_class_ap
        raise ValueError(f"unknown metric {metric!r}")

    @property
    def mean_metric(self):
        return self.mean_accuracy if self.metric == "accuracy" else self.mean_ap

    def format(self):
        def num(v):
            return "" if v is None else repr(float(v))

        lines = ["label\taccuracy\tap\tdelta\ttsvf"]
        for c in self.classes:
            lines.append(
                "\t".join([
                    str(c),
                    num(self.per_class_accuracy[c]),
                    num(self.per_class_ap[c]),
                    num(self.delta.get(c)),
                    num(self.tsvf.get(c)),
                ])
            )
        lines.append("")
        lines.append("[summary]")
        summary = {
            "name": self.name,
            "metric": self.metric,
            "mean_accuracy": repr(self.mean_accuracy),
            "mean_ap": repr(self.mean_ap),
            "n_classes": str(len(self.classes)),
            "n_folds": str(len(self.folds)),
            "baseline": self.baseline,
        }
        summary.update({k: str(v) for k, v in self.extra.items()})
        for k, v in summary.items():
            lines.append(f"{k}={v}")
        for f in self.folds:
            lines.append(
                "fold={group}:{n_test}:{n_correct}".format(**f)
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text):
        lines = text.splitlines()
        if not lines or not lines[0].startswith("label\t"):
            raise ValueError("not an evaluation report")
        classes, acc, ap, delta, tv = [], {}, {}, {}, {}
        i = 1
        while i < len(lines) and lines[i].strip():
            parts = lines[i].split("\t")
            c = parts[0]
            classes.append(c)
            acc[c] = float(parts[1])
            ap[c] = float(parts[2])
            if parts[3]:
                delta[c] = float(parts[3])
            if parts[4]:
                tv[c] = float(parts[4])
            i += 1
        summary, folds = {}, []
        for line in lines[i:]:
            if "=" not in line:
                continue
            k, v = line.split("=", 1)
            if k == "fold":
                g, nt, nc = v.rsplit(":", 2)
                folds.append({"group": g, "n_test": int(nt), "n_correct": int(nc)})
            else:
                summary[k] = v
        known = {"name", "metric", "mean_accuracy", "mean_ap", "n_classes", "n_folds", "baseline"}
        return cls(
            classes, acc, ap,
            metric=summary.get("metric", "accuracy"),
            name=summary.get("name", ""),
            folds=folds,
            delta=delta,
            tsvf=tv,
            baseline=summary.get("baseline", ""),
            extra={k: v for k, v in summary.items() if k not in known},
        )


def improvement_split(baseline, method, manifest, metric=None):
    """Split classes by the sign of (method - baseline) and compare their mTSVF.

    Returns counts of classes with delta >= 0 and delta < 0 plus the mean
    TSVF of each group (``None`` for an empty group).
    """
    if sorted(baseline.classes) != sorted(method.classes):
        raise ValueError("reports cover different class sets")
    metric = metric or manifest.metric
    a = baseline.per_class(metric)
    b = method.per_class(metric)
    _, per_tsvf = mtsvf(manifest)
    delta = {c: b[c] - a[c] for c in baseline.classes}
    up = [c for c in baseline.classes if delta[c] >= 0]
    down = [c for c in baseline.classes if delta[c] < 0]

    def group_mean(cs):
        return float(np.mean([per_tsvf[c] for c in cs])) if cs else None

    return {
        "metric": metric,
        "delta": delta,
        "improved": up,
        "hurt": down,
        "n_improved": len(up),
        "n_hurt": len(down),
        "mtsvf_improved": group_mean(up),
        "mtsvf_hurt": group_mean(down),
    }
