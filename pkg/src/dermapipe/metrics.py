"""Multiclass evaluation: confusion matrix, per-class P/R/F1, weighted F1.

Weighted F1 averages per-class F1 scores with weights proportional to each
class's support. Precision or recall with a zero denominator is defined as
0, so degenerate predictions never produce NaNs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import NUM_CLASSES
from .errors import EmptyInput, EmptyList, InvalidLabel, LengthMismatch


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    confusion: tuple[tuple[int, ...], ...]  # rows = true class, cols = predicted
    per_class: tuple[ClassMetrics, ...]
    weighted_f1: float
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "confusion": [list(row) for row in self.confusion],
            "per_class": [
                {"precision": c.precision, "recall": c.recall,
                 "f1": c.f1, "support": c.support}
                for c in self.per_class
            ],
            "weighted_f1": self.weighted_f1,
        }

    def to_csv_row(self) -> str:
        """Flat single-line form for cross-experiment tabulation."""
        cells = [repr(self.weighted_f1), str(self.n_samples)]
        for c in self.per_class:
            cells += [repr(c.precision), repr(c.recall), repr(c.f1), str(c.support)]
        return ",".join(cells)

    @staticmethod
    def csv_header(num_classes: int = NUM_CLASSES) -> str:
        cols = ["weighted_f1", "n_samples"]
        for k in range(num_classes):
            cols += [f"precision_{k}", f"recall_{k}", f"f1_{k}", f"support_{k}"]
        return ",".join(cols)


def _check_labels(y_true: Sequence[int], y_pred: Sequence[int], num_classes: int) -> None:
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"{len(y_true)} true labels vs {len(y_pred)} predictions")
    for name, ys in (("true", y_true), ("pred", y_pred)):
        for i, y in enumerate(ys):
            if isinstance(y, bool) or not 0 <= int(y) < num_classes:
                raise InvalidLabel(f"{name}[{i}]", y)


def confusion_matrix(
    y_true: Sequence[int], y_pred: Sequence[int], num_classes: int = NUM_CLASSES
) -> np.ndarray:
    """Count matrix with entry (i, j) = samples of true class i predicted as j."""
    _check_labels(y_true, y_pred, num_classes)
    mat = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        mat[int(t), int(p)] += 1
    return mat


def per_class_metrics(confusion: np.ndarray) -> list[ClassMetrics]:
    out = []
    for c in range(confusion.shape[0]):
        tp = int(confusion[c, c])
        support = int(confusion[c, :].sum())
        predicted = int(confusion[:, c].sum())
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out.append(ClassMetrics(precision, recall, f1, support))
    return out


def weighted_f1_from_confusion(confusion: np.ndarray) -> float:
    per_class = per_class_metrics(confusion)
    total = sum(c.support for c in per_class)
    if total == 0:
        raise EmptyInput("no samples")
    return sum(c.f1 * c.support for c in per_class) / total


def weighted_f1(
    y_true: Sequence[int], y_pred: Sequence[int], num_classes: int = NUM_CLASSES
) -> float:
    """Support-weighted F1 computed directly from label pairs.

    Deliberately does not go through :func:`confusion_matrix`; the two code
    paths cross-check each other.
    """
    if len(y_true) == 0:
        raise EmptyInput("no samples")
    _check_labels(y_true, y_pred, num_classes)
    n = len(y_true)
    acc = 0.0
    for c in range(num_classes):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        pred_c = sum(1 for p in y_pred if p == c)
        true_c = sum(1 for t in y_true if t == c)
        precision = tp / pred_c if pred_c else 0.0
        recall = tp / true_c if true_c else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        acc += f1 * true_c
    return acc / n


def evaluate(
    y_true: Sequence[int], y_pred: Sequence[int], num_classes: int = NUM_CLASSES
) -> MetricsReport:
    """Full report: confusion matrix, per-class rates, weighted F1."""
    if len(y_true) == 0:
        raise EmptyInput("no samples")
    confusion = confusion_matrix(y_true, y_pred, num_classes)
    per_class = per_class_metrics(confusion)
    return MetricsReport(
        confusion=tuple(tuple(int(v) for v in row) for row in confusion),
        per_class=tuple(per_class),
        weighted_f1=weighted_f1_from_confusion(confusion),
        n_samples=len(y_true),
    )


def aggregate_splits(reports: Sequence[MetricsReport | float]) -> tuple[float, float]:
    """Mean and population standard deviation of weighted F1 across splits."""
    if len(reports) == 0:
        raise EmptyList("no reports to aggregate")
    values = np.array(
        [r.weighted_f1 if isinstance(r, MetricsReport) else float(r) for r in reports],
        dtype=np.float64,
    )
    return float(values.mean()), float(values.std())  # ddof=0: population std


def write_report_json(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
