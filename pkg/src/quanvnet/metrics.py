"""Confusion-matrix metrics, ROC/AUC, and report assembly.

Binary metrics exist in two conventions where the published formula
differs from the standard one (balanced accuracy, F-beta): ``STANDARD``
is the default; ``PAPER_LITERAL`` evaluates the printed variant for table
reconciliation. Table-style outputs truncate to one decimal in percentage
points, which is the rounding that reproduces the published rows.

Degenerate denominators never raise: the metric is reported as 0.0 and a
warning is attached to the report.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

CONVENTIONS = ("STANDARD", "PAPER_LITERAL")


@dataclass
class ConfusionMatrix:
    """C x C count grid indexed (true class, predicted class)."""

    n_classes: int
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(y_true, y_pred, n_classes: int) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if n_classes < 2:
        raise ConfigError("need at least 2 classes")
    if y_true.shape != y_pred.shape:
        raise ConfigError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    for name, arr in (("true", y_true), ("predicted", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ConfigError(f"{name} labels outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(n_classes, counts)


def binary_counts_from(tp: int, fn: int, fp: int, tn: int) -> ConfusionMatrix:
    """Two-class matrix with class 1 as positive (row/col 1)."""
    return ConfusionMatrix(2, np.array([[tn, fp], [fn, tp]], dtype=np.int64))


def one_vs_rest_counts(cm: ConfusionMatrix, positive: int) -> tuple[int, int, int, int]:
    """(TP, FN, FP, TN) treating ``positive`` against all other classes."""
    if not 0 <= positive < cm.n_classes:
        raise ConfigError(f"positive class {positive} out of range")
    tp = int(cm.counts[positive, positive])
    fn = int(cm.counts[positive].sum() - tp)
    fp = int(cm.counts[:, positive].sum() - tp)
    tn = cm.total - tp - fn - fp
    return tp, fn, fp, tn


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def accuracy(cm: ConfusionMatrix) -> float:
    return _ratio(float(np.trace(cm.counts)), cm.total)


def sensitivity(cm: ConfusionMatrix, positive: int) -> float:
    tp, fn, _, _ = one_vs_rest_counts(cm, positive)
    return _ratio(tp, tp + fn)


def specificity(cm: ConfusionMatrix, positive: int) -> float:
    _, _, fp, tn = one_vs_rest_counts(cm, positive)
    return _ratio(tn, tn + fp)


def precision(cm: ConfusionMatrix, positive: int) -> float:
    tp, _, fp, _ = one_vs_rest_counts(cm, positive)
    return _ratio(tp, tp + fp)


def f1(cm: ConfusionMatrix, positive: int) -> float:
    p = precision(cm, positive)
    r = sensitivity(cm, positive)
    return _ratio(2.0 * p * r, p + r)


def false_positive_rate(cm: ConfusionMatrix, positive: int) -> float:
    _, _, fp, tn = one_vs_rest_counts(cm, positive)
    return _ratio(fp, fp + tn)


def balanced_accuracy(cm: ConfusionMatrix, positive: int, convention: str = "STANDARD") -> float:
    if convention not in CONVENTIONS:
        raise ConfigError(f"convention must be one of {CONVENTIONS}")
    tp, fn, fp, tn = one_vs_rest_counts(cm, positive)
    if convention == "STANDARD":
        return (_ratio(tp, tp + fn) + _ratio(tn, tn + fp)) / 2.0
    return (_ratio(tp, tp + fp) + _ratio(tn, tn + fn)) / 2.0


def fbeta(cm: ConfusionMatrix, positive: int, beta: float, convention: str = "STANDARD") -> float:
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    if convention not in CONVENTIONS:
        raise ConfigError(f"convention must be one of {CONVENTIONS}")
    p = precision(cm, positive)
    r = sensitivity(cm, positive)
    b2 = beta * beta
    if convention == "STANDARD":
        return _ratio((1 + b2) * p * r, b2 * p + r)
    return _ratio((1 + b2) * p * r, b2 * (p + r))


def table_percent(value: float) -> float:
    """One-decimal percentage as printed in the published tables (truncated)."""
    return math.floor(value * 1000.0 + 1e-9) / 10.0


# ---------------------------------------------------------------------------
# ROC / AUC
# ---------------------------------------------------------------------------

@dataclass
class RocCurve:
    """Threshold sweep from (0, 0) to (1, 1); trapezoidal AUC."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def roc_auc(scores, labels) -> RocCurve:
    """ROC curve for binary labels (1 = positive), grouping tied scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ConfigError("scores and labels must be 1-d arrays of equal length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ConfigError("ROC needs at least one positive and one negative sample")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    pos = labels[order].astype(np.int64)
    # last index of each tied group of scores
    ends = np.nonzero(np.append(s[1:] != s[:-1], True))[0]
    tp = np.cumsum(pos)[ends]
    fp = np.cumsum(1 - pos)[ends]
    thresholds = np.concatenate(([np.inf], s[ends]))
    fpr = np.concatenate(([0.0], fp / n_neg))
    tpr = np.concatenate(([0.0], tp / n_pos))
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(thresholds, fpr, tpr, auc)


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    mode: str  # "binary" or "multiclass"
    classes: list[str]
    accuracy: float
    positive_class: str | None
    per_class: dict[str, dict[str, float]]
    macro: dict[str, float]
    confusion: list[list[int]]
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "classes": self.classes,
            "accuracy": self.accuracy,
            "positive_class": self.positive_class,
            "per_class": self.per_class,
            "macro": self.macro,
            "confusion": self.confusion,
            "warnings": self.warnings,
        }


def _collect_warnings(cm: ConfusionMatrix, idx: int, name: str, warnings: list[str]) -> None:
    tp, fn, fp, tn = one_vs_rest_counts(cm, idx)
    for label, den in (
        ("sensitivity", tp + fn),
        ("specificity", tn + fp),
        ("precision", tp + fp),
        ("negative-rate", tn + fn),
    ):
        if den == 0:
            warnings.append(f"{label} denominator is 0 for class {name!r}; reported as 0")


def _class_metrics(cm: ConfusionMatrix, idx: int, curve: RocCurve | None) -> dict[str, float]:
    tp, fn, fp, tn = one_vs_rest_counts(cm, idx)
    out = {
        "accuracy": _ratio(tp + tn, cm.total),
        "sensitivity": sensitivity(cm, idx),
        "specificity": specificity(cm, idx),
        "precision": precision(cm, idx),
        "f1": f1(cm, idx),
        "balanced_accuracy": balanced_accuracy(cm, idx),
        "balanced_accuracy_paper_literal": balanced_accuracy(cm, idx, "PAPER_LITERAL"),
        "fbeta_0.5": fbeta(cm, idx, 0.5),
        "fbeta_2": fbeta(cm, idx, 2.0),
        "false_positive_rate": false_positive_rate(cm, idx),
    }
    if curve is not None:
        out["auc"] = curve.auc
    return out


def _validate_probas(cm: ConfusionMatrix, y_true, probas) -> tuple[np.ndarray, np.ndarray]:
    y_true = np.asarray(y_true, dtype=np.int64)
    probas = np.asarray(probas, dtype=np.float64)
    if probas.ndim != 2 or probas.shape != (y_true.size, cm.n_classes):
        raise ConfigError(
            f"probability matrix shape {probas.shape} does not match "
            f"{y_true.size} samples x {cm.n_classes} classes")
    if y_true.size != cm.total:
        raise ConfigError("label count does not match confusion matrix total")
    return y_true, probas


def roc_curves(cm: ConfusionMatrix, y_true, probas) -> dict[int, RocCurve]:
    """One-vs-rest ROC per class; skips classes missing a positive or negative."""
    y_true, probas = _validate_probas(cm, y_true, probas)
    curves = {}
    for idx in range(cm.n_classes):
        ovr = (y_true == idx).astype(int)
        if 0 < ovr.sum() < ovr.size:
            curves[idx] = roc_auc(probas[:, idx], ovr)
    return curves


def build_report(
    cm: ConfusionMatrix,
    y_true,
    probas,
    class_names: list[str] | tuple[str, ...],
    positive_class: str | None = None,
) -> MetricsReport:
    """Full report from a confusion matrix plus per-sample probabilities.

    Binary mode scores both orientations (each class as positive once) and
    records which one is the configured positive class. Multi-class mode
    scores every class one-vs-rest and macro-averages.
    """
    if len(class_names) != cm.n_classes:
        raise ConfigError(f"{len(class_names)} class names for {cm.n_classes}-class matrix")
    if positive_class is not None and positive_class not in class_names:
        raise ConfigError(f"positive class {positive_class!r} not in {class_names}")
    curves = roc_curves(cm, y_true, probas)
    warnings: list[str] = []
    per_class = {}
    for idx, name in enumerate(class_names):
        per_class[name] = _class_metrics(cm, idx, curves.get(idx))
        _collect_warnings(cm, idx, name, warnings)
        if idx not in curves:
            warnings.append(f"ROC undefined for class {name!r} (single-class labels); omitted")
    metric_keys = sorted({k for m in per_class.values() for k in m})
    macro = {
        k: float(np.mean([m[k] for m in per_class.values() if k in m]))
        for k in metric_keys
    }
    mode = "binary" if cm.n_classes == 2 else "multiclass"
    if mode == "binary" and positive_class is None:
        positive_class = class_names[1]
    return MetricsReport(
        mode=mode,
        classes=list(class_names),
        accuracy=accuracy(cm),
        positive_class=positive_class if mode == "binary" else None,
        per_class=per_class,
        macro=macro,
        confusion=cm.counts.tolist(),
        warnings=warnings,
    )


def per_class_report(cm, y_true, probas, class_names=None) -> MetricsReport:
    """One-vs-rest scoring of every class; names default to indices."""
    names = list(class_names) if class_names else [str(i) for i in range(cm.n_classes)]
    return build_report(cm, y_true, probas, names)


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"

_CSV_COLUMNS = (
    "accuracy", "sensitivity", "specificity", "precision", "f1",
    "balanced_accuracy", "fbeta_0.5", "fbeta_2", "auc",
)


def report_to_csv(report: MetricsReport) -> str:
    """Table-style rows, one-decimal truncated percentages."""
    lines = ["class," + ",".join(_CSV_COLUMNS)]

    def fmt(metrics: dict[str, float]) -> str:
        cells = []
        for col in _CSV_COLUMNS:
            cells.append(f"{table_percent(metrics[col]):.1f}" if col in metrics else "")
        return ",".join(cells)

    for name in report.classes:
        lines.append(f"{name},{fmt(report.per_class[name])}")
    lines.append(f"macro,{fmt(report.macro)}")
    lines.append(f"overall,{table_percent(report.accuracy):.1f}" + "," * (len(_CSV_COLUMNS) - 1))
    return "\n".join(lines) + "\n"


def confusion_to_csv(report: MetricsReport) -> str:
    lines = ["true\\predicted," + ",".join(report.classes)]
    for name, row in zip(report.classes, report.confusion):
        lines.append(name + "," + ",".join(str(v) for v in row))
    return "\n".join(lines) + "\n"


def roc_to_csv(curves: dict[str, RocCurve]) -> str:
    lines = ["class,threshold,fpr,tpr"]
    for name, curve in curves.items():
        for t, x, y in zip(curve.thresholds, curve.fpr, curve.tpr):
            t_str = "inf" if np.isinf(t) else repr(float(t))
            lines.append(f"{name},{t_str},{float(x)!r},{float(y)!r}")
    return "\n".join(lines) + "\n"
