import pytest

from tsltnet.numcore import Matrix, RandSource
from tsltnet.pipeline import FeatureMatrix


def oracle_report(y_true, y_pred, k):
    """Definitional P/R/F1 oracle computed from raw pair counts, independent
    of the metrics module."""
    per_class = []
    for c in range(k):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        support = sum(1 for t in y_true if t == c)
        per_class.append((precision, recall, f1, support))
    total = len(y_true)
    accuracy = (sum(1 for t, p in zip(y_true, y_pred) if t == p) / total
                if total else 0.0)
    macro = tuple(sum(pc[i] for pc in per_class) / k for i in range(3))
    if total:
        weighted = tuple(sum(pc[i] * pc[3] for pc in per_class) / total
                         for i in range(3))
    else:
        weighted = (0.0, 0.0, 0.0)
    return per_class, accuracy, macro, weighted


def make_blobs(classes: int, features: int, rows_per_class: int, separation: float,
               seed: int) -> FeatureMatrix:
    """In-memory separable Gaussian clusters (no CSV round trip)."""
    rng = RandSource(seed)
    n = classes * rows_per_class
    x = Matrix.zeros(n, features)
    y = []
    row = 0
    for c in range(classes):
        for _ in range(rows_per_class):
            base = row * features
            for j in range(features):
                center = separation if j % classes == c else 0.0
                x.data[base + j] = center + rng.normal()
            y.append(c)
            row += 1
    return FeatureMatrix(x, y, [f"class_{c}" for c in range(classes)])


@pytest.fixture
def blobs3():
    return make_blobs(classes=3, features=6, rows_per_class=120, separation=6.0,
                      seed=11)
