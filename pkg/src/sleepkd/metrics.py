"""Confusion-matrix evaluation: accuracy, per-class and weighted F1."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """(C, C) count matrix; rows are true classes, columns predictions."""
    y_true = np.asarray(y_true).reshape(-1)
    y_pred = np.asarray(y_pred).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size:
        lo = min(y_true.min(), y_pred.min())
        hi = max(y_true.max(), y_pred.max())
        if lo < 0 or hi >= n_classes:
            raise DataError(f"labels outside [0, {n_classes}): saw {lo}..{hi}")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    return conf


confusion = confusion_matrix


def accuracy(conf: np.ndarray) -> float:
    total = conf.sum()
    if total == 0:
        return 0.0
    return float(np.trace(conf) / total)


def precision_recall_f1(conf: np.ndarray):
    """Per-class (precision, recall, F1) with the 0-convention for
    classes that have no predictions or no support."""
    conf = np.asarray(conf, dtype=np.float64)
    tp = np.diag(conf)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    prec = np.zeros(conf.shape[0])
    rec = np.zeros(conf.shape[0])
    f1 = np.zeros(conf.shape[0])
    nz = tp + fp > 0
    prec[nz] = tp[nz] / (tp + fp)[nz]
    nz = tp + fn > 0
    rec[nz] = tp[nz] / (tp + fn)[nz]
    denom = 2 * tp + fp + fn
    nz = denom > 0
    f1[nz] = 2 * tp[nz] / denom[nz]
    return prec, rec, f1


def per_class_f1(conf: np.ndarray) -> np.ndarray:
    return precision_recall_f1(conf)[2]


def weighted_f1(conf: np.ndarray) -> float:
    """Per-class F1 averaged with weights equal to class support (TP + FN)."""
    conf = np.asarray(conf, dtype=np.float64)
    if conf.ndim != 2 or conf.shape[0] != conf.shape[1]:
        raise ShapeError(f"confusion matrix must be square, got {conf.shape}")
    support = conf.sum(axis=1)
    total = support.sum()
    if total == 0:
        raise DataError("empty confusion matrix: no samples to score")
    return float((per_class_f1(conf) * support).sum() / total)


@dataclass
class EvalReport:
    """Per-run evaluation summary."""

    confusion: np.ndarray
    accuracy: float
    weighted_f1: float
    precision: np.ndarray
    recall: np.ndarray
    f1_per_class: np.ndarray
    support: np.ndarray
    class_names: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "weighted_f1": self.weighted_f1,
            "precision": [float(v) for v in self.precision],
            "recall": [float(v) for v in self.recall],
            "f1_per_class": [float(v) for v in self.f1_per_class],
            "support": [int(v) for v in self.support],
            "class_names": list(self.class_names),
            "confusion": self.confusion.tolist(),
        }


def report(conf: np.ndarray, class_names=None) -> EvalReport:
    """EvalReport from a confusion matrix; a zero matrix warns and
    reports all scores as 0."""
    conf = np.asarray(conf)
    if class_names is None:
        class_names = [str(i) for i in range(conf.shape[0])]
    if conf.sum() == 0:
        warnings.warn("evaluating on zero samples; all scores reported as 0")
        wf1 = 0.0
    else:
        wf1 = weighted_f1(conf)
    prec, rec, f1 = precision_recall_f1(conf)
    return EvalReport(
        confusion=conf,
        accuracy=accuracy(conf),
        weighted_f1=wf1,
        precision=prec,
        recall=rec,
        f1_per_class=f1,
        support=conf.sum(axis=1),
        class_names=list(class_names),
    )


def format_tables(results: dict, class_names) -> str:
    """Two aligned text tables over methods: overall scores, per-class F1.

    ``results`` maps a method name to an EvalReport.
    """
    lines = []
    name_w = max([len(k) for k in results] + [6])
    lines.append("Overall")
    lines.append(f"  {'method':<{name_w}}  F1-weighted  Accuracy")
    for method, rep in results.items():
        lines.append(f"  {method:<{name_w}}  {rep.weighted_f1:>11.4f}  {rep.accuracy:>8.4f}")
    lines.append("")
    lines.append("Per-class F1")
    head = "  ".join(f"{c:>6}" for c in class_names)
    lines.append(f"  {'method':<{name_w}}  {head}")
    for method, rep in results.items():
        row = "  ".join(f"{v:>6.4f}" for v in rep.f1_per_class)
        lines.append(f"  {method:<{name_w}}  {row}")
    return "\n".join(lines)
