"""Cross-validation protocols over encoded clips."""

import logging

import numpy as np

from .metrics import EvalReport, average_precision, mean_class_accuracy
from .svm import predict_scores, train_one_vs_all

log = logging.getLogger(__name__)


def _score_split(x, labels, train_idx, test_idx, C, seed):
    train_labels = [labels[i] for i in train_idx]
    model = train_one_vs_all(x[train_idx], train_labels, C=C, seed=seed)
    scores, pred = predict_scores(model, x[test_idx])
    return model, scores, pred


def _report(classes, labels, idx, preds, score_rows, folds, metric, name):
    lab = [labels[i] for i in idx]
    _, acc = mean_class_accuracy(preds, lab, classes)
    scores = np.array(score_rows)
    ap = {}
    for j, c in enumerate(classes):
        pos = np.array([l == c for l in lab])
        ap[c] = average_precision(scores[:, j], pos) if pos.any() else 0.0
    return EvalReport(classes, acc, ap, metric=metric, name=name, folds=folds)


def evaluate_split(x, labels, train_idx, test_idx, C=100.0, seed=0, metric="accuracy", name=""):
    """Train on ``train_idx``, report on ``test_idx`` only."""
    x = np.asarray(x)
    labels = list(labels)
    train_idx, test_idx = list(train_idx), list(test_idx)
    if set(train_idx) & set(test_idx):
        raise ValueError("train and test sets overlap")
    classes = sorted({labels[i] for i in test_idx} | {labels[i] for i in train_idx})
    model, scores, pred = _score_split(x, labels, train_idx, test_idx, C, seed)
    rows = _align_scores(scores, model.classes, classes)
    n_correct = sum(p == labels[i] for p, i in zip(pred, test_idx))
    folds = [{"group": "test", "n_test": len(test_idx), "n_correct": n_correct}]
    return _report(classes, labels, test_idx, pred, rows, folds, metric, name)


def _align_scores(scores, model_classes, classes):
    # classes unseen in training get -inf scores
    out = np.full((len(scores), len(classes)), -np.inf)
    for j, c in enumerate(classes):
        if c in model_classes:
            out[:, j] = scores[:, model_classes.index(c)]
    return out


def leave_one_group_out(x, labels, groups, C=100.0, seed=0, metric="accuracy", name=""):
    """One fold per group; accuracy and AP are pooled over all held-out clips."""
    x = np.asarray(x)
    labels = list(labels)
    groups = list(groups)
    uniq = sorted(set(groups))
    if len(uniq) < 2:
        raise ValueError("leave-one-group-out needs at least two groups")
    classes = sorted(set(labels))
    all_idx, all_pred, all_rows, folds = [], [], [], []
    for g in uniq:
        test_idx = [i for i, gg in enumerate(groups) if gg == g]
        train_idx = [i for i, gg in enumerate(groups) if gg != g]
        train_classes = {labels[i] for i in train_idx}
        missing = {labels[i] for i in test_idx} - train_classes
        if missing:
            log.warning("fold %s: no training clips for class(es) %s", g, sorted(missing))
        if len(train_classes) < 2:
            raise ValueError(f"fold {g}: training set has fewer than two classes")
        model, scores, pred = _score_split(x, labels, train_idx, test_idx, C, seed)
        n_correct = sum(p == labels[i] for p, i in zip(pred, test_idx))
        folds.append({"group": g, "n_test": len(test_idx), "n_correct": n_correct})
        all_idx += test_idx
        all_pred += pred
        all_rows += list(_align_scores(scores, model.classes, classes))
    return _report(classes, labels, all_idx, all_pred, all_rows, folds, metric, name)
