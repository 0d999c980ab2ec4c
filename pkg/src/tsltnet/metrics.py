"""Confusion matrices and classification reports.

Conventions for degenerate cells: precision (recall) over an empty predicted
(true) column (row) is 0, and F1 is 0 when P + R = 0. Macro averages are
computed from full-precision per-class values, never from rounded display
strings; weighted averages are support-weighted.
"""

from __future__ import annotations

from dataclasses import dataclass

from .numcore import Matrix


@dataclass
class ConfusionMatrix:
    """counts[i][j] = rows with true class i predicted as class j."""

    counts: list[list[int]]
    class_names: list[str]

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)


@dataclass
class ClassMetrics:
    name: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class AverageMetrics:
    precision: float
    recall: float
    f1: float


@dataclass
class EvalReport:
    classes: list[ClassMetrics]
    accuracy: float
    macro_avg: AverageMetrics
    weighted_avg: AverageMetrics
    confusion: ConfusionMatrix

    def to_json_dict(self) -> dict:
        """Full-precision values plus 5-decimal display strings."""
        def disp(v: float) -> str:
            return f"{v:.5f}"

        return {
            "classes": [
                {
                    "name": c.name,
                    "precision": c.precision,
                    "recall": c.recall,
                    "f1": c.f1,
                    "support": c.support,
                    "display": {
                        "precision": disp(c.precision),
                        "recall": disp(c.recall),
                        "f1": disp(c.f1),
                    },
                }
                for c in self.classes
            ],
            "accuracy": self.accuracy,
            "accuracy_display": disp(self.accuracy),
            "macro_avg": {
                "precision": self.macro_avg.precision,
                "recall": self.macro_avg.recall,
                "f1": self.macro_avg.f1,
                "display": {
                    "precision": disp(self.macro_avg.precision),
                    "recall": disp(self.macro_avg.recall),
                    "f1": disp(self.macro_avg.f1),
                },
            },
            "weighted_avg": {
                "precision": self.weighted_avg.precision,
                "recall": self.weighted_avg.recall,
                "f1": self.weighted_avg.f1,
                "display": {
                    "precision": disp(self.weighted_avg.precision),
                    "recall": disp(self.weighted_avg.recall),
                    "f1": disp(self.weighted_avg.f1),
                },
            },
            "confusion": [list(row) for row in self.confusion.counts],
        }

    def to_text(self) -> str:
        """Aligned classification-report table."""
        name_w = max([len("weighted avg")] + [len(c.name) for c in self.classes])
        lines = [f"{'':<{name_w}}  precision   recall  f1-score  support"]
        for c in self.classes:
            lines.append(
                f"{c.name:<{name_w}}    {c.precision:.5f}  {c.recall:.5f}"
                f"   {c.f1:.5f}  {c.support:7d}"
            )
        total = self.confusion.total
        lines.append("")
        lines.append(f"{'accuracy':<{name_w}}                      "
                     f"{self.accuracy:.5f}  {total:7d}")
        for label, avg in (("macro avg", self.macro_avg),
                           ("weighted avg", self.weighted_avg)):
            lines.append(
                f"{label:<{name_w}}    {avg.precision:.5f}  {avg.recall:.5f}"
                f"   {avg.f1:.5f}  {total:7d}"
            )
        return "\n".join(lines)


def confusion(y_true: list[int], y_pred: list[int], num_classes: int,
              class_names: list[str] | None = None) -> ConfusionMatrix:
    """Count (true, predicted) pairs into a num_classes x num_classes table."""
    if len(y_true) != len(y_pred):
        raise ValueError(
            f"{len(y_true)} true labels vs {len(y_pred)} predictions"
        )
    counts = [[0] * num_classes for _ in range(num_classes)]
    for i, (t, p) in enumerate(zip(y_true, y_pred)):
        if not (0 <= t < num_classes and 0 <= p < num_classes):
            raise ValueError(
                f"label pair ({t}, {p}) at row {i} outside [0, {num_classes})"
            )
        counts[t][p] += 1
    if class_names is None:
        class_names = [f"class_{i}" for i in range(num_classes)]
    elif len(class_names) != num_classes:
        raise ValueError(
            f"{len(class_names)} names for {num_classes} classes"
        )
    return ConfusionMatrix(counts, list(class_names))


def report(cm: ConfusionMatrix) -> EvalReport:
    """Per-class precision/recall/F1 with accuracy, macro and weighted averages."""
    k = cm.num_classes
    total = cm.total
    col_sums = [sum(cm.counts[i][j] for i in range(k)) for j in range(k)]
    row_sums = [sum(cm.counts[i]) for i in range(k)]
    classes = []
    for i in range(k):
        tp = cm.counts[i][i]
        precision = tp / col_sums[i] if col_sums[i] else 0.0
        recall = tp / row_sums[i] if row_sums[i] else 0.0
        f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
        classes.append(ClassMetrics(cm.class_names[i], precision, recall, f1,
                                    row_sums[i]))
    trace = sum(cm.counts[i][i] for i in range(k))
    accuracy = trace / total if total else 0.0
    macro = AverageMetrics(
        sum(c.precision for c in classes) / k,
        sum(c.recall for c in classes) / k,
        sum(c.f1 for c in classes) / k,
    )
    if total:
        weighted = AverageMetrics(
            sum(c.precision * c.support for c in classes) / total,
            sum(c.recall * c.support for c in classes) / total,
            sum(c.f1 * c.support for c in classes) / total,
        )
    else:
        weighted = AverageMetrics(0.0, 0.0, 0.0)
    return EvalReport(classes, accuracy, macro, weighted, cm)


def argmax_labels(probs: Matrix) -> list[int]:
    """Index of the row maximum; ties resolve to the lowest index."""
    if probs.cols == 0:
        raise ValueError("cannot take the argmax of empty rows")
    out = []
    data, k = probs.data, probs.cols
    for i in range(probs.rows):
        base = i * k
        best, best_v = 0, data[base]
        for j in range(1, k):
            v = data[base + j]
            if v > best_v:
                best, best_v = j, v
        out.append(best)
    return out
