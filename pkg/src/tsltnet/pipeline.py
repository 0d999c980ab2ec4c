"""Flow-record ingestion and preprocessing.

Reads header-carrying CSV into typed columns, fits imputation/standardization
statistics on training data only, and applies them anywhere else (the
transform never looks at the statistics of the data it is transforming).
Also provides the stratified splitter, binary relabeling, and a synthetic
Gaussian-cluster dataset generator for desk-scale experiments.
"""

from __future__ import annotations

import csv
import math
import os
from array import array
from dataclasses import dataclass

from .backend import kernels as K
from .numcore import Matrix, RandSource, zeros_buf

MISSING_TOKENS = frozenset({"", "nan", "null"})

NUMERIC = "numeric"
CATEGORICAL = "categorical"
LABEL = "label"

_PROTO_VALUES = ("tcp", "udp", "icmp")


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def _parse_numeric(cell: str) -> float | None:
    try:
        v = float(cell)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


@dataclass
class ColumnSchema:
    name: str
    kind: str  # numeric | categorical | label
    categories: list[str] | None
    missing: int


@dataclass
class FlowTable:
    """Column-typed view of a parsed CSV."""

    columns: list[str]  # header order, label included
    label_column: str
    numeric: dict[str, list[float | None]]
    categorical: dict[str, list[str | None]]
    labels: list[str | None]
    n_rows: int

    def kind_of(self, name: str) -> str:
        if name == self.label_column:
            return LABEL
        return NUMERIC if name in self.numeric else CATEGORICAL

    def subset(self, indices: list[int]) -> "FlowTable":
        return FlowTable(
            columns=list(self.columns),
            label_column=self.label_column,
            numeric={c: [v[i] for i in indices] for c, v in self.numeric.items()},
            categorical={c: [v[i] for i in indices] for c, v in self.categorical.items()},
            labels=[self.labels[i] for i in indices],
            n_rows=len(indices),
        )


@dataclass
class FeatureMatrix:
    """Standardized feature matrix with encoded integer labels."""

    x: Matrix
    y: list[int]
    class_names: list[str]

    @property
    def n(self) -> int:
        return self.x.rows

    def gather(self, indices: list[int]) -> "FeatureMatrix":
        idx = array("q", indices)
        out = Matrix.zeros(len(indices), self.x.cols)
        K.gather_rows(self.x.data, self.x.cols, idx, out.data)
        return FeatureMatrix(out, [self.y[i] for i in indices], list(self.class_names))


@dataclass
class PreprocessState:
    """Fitted per-column statistics, reused verbatim at inference time."""

    feature_order: list[str]
    kinds: dict[str, str]
    medians: dict[str, float]
    means: dict[str, float]
    stds: dict[str, float]
    modes: dict[str, str]
    category_maps: dict[str, dict[str, int]]
    label_map: dict[str, int]
    class_names: list[str]

    @property
    def input_dim(self) -> int:
        return len(self.feature_order)

    def to_json_dict(self) -> dict:
        return {
            "feature_order": self.feature_order,
            "kinds": self.kinds,
            "medians": self.medians,
            "means": self.means,
            "stds": self.stds,
            "modes": self.modes,
            "category_maps": self.category_maps,
            "label_map": self.label_map,
            "class_names": self.class_names,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PreprocessState":
        return cls(
            feature_order=list(d["feature_order"]),
            kinds=dict(d["kinds"]),
            medians={k: float(v) for k, v in d["medians"].items()},
            means={k: float(v) for k, v in d["means"].items()},
            stds={k: float(v) for k, v in d["stds"].items()},
            modes=dict(d["modes"]),
            category_maps={c: {k: int(v) for k, v in m.items()}
                           for c, m in d["category_maps"].items()},
            label_map={k: int(v) for k, v in d["label_map"].items()},
            class_names=list(d["class_names"]),
        )


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def read_csv(path: str, label_column: str):
    """Parse a header-carrying CSV into a typed FlowTable.

    A column is numeric iff every non-missing cell parses as a finite real;
    missing cells are "", "NaN"/"nan" and "null" (case-insensitive). Returns
    (table, schemas). Row numbers in error messages are file line numbers
    (the header is line 1).
    """
    if not os.path.exists(path):
        raise DataError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty (no header row)") from None
        if label_column not in header:
            raise DataError(f"label column {label_column!r} not in header {header}")
        raw_cols: list[list[str]] = [[] for _ in header]
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(
                    f"row {line_no} has {len(row)} cells, expected {len(header)}"
                )
            for j, cell in enumerate(row):
                raw_cols[j].append(cell)
    n_rows = len(raw_cols[0]) if header else 0

    numeric: dict[str, list[float | None]] = {}
    categorical: dict[str, list[str | None]] = {}
    labels: list[str | None] = []
    schemas: list[ColumnSchema] = []
    for name, cells in zip(header, raw_cols):
        if name == label_column:
            labels = [None if _is_missing(c) else c for c in cells]
            missing = sum(1 for v in labels if v is None)
            cats = sorted({v for v in labels if v is not None})
            schemas.append(ColumnSchema(name, LABEL, cats, missing))
            continue
        parsed: list[float | None] = []
        is_numeric = True
        for c in cells:
            if _is_missing(c):
                parsed.append(None)
                continue
            v = _parse_numeric(c)
            if v is None:
                is_numeric = False
                break
            parsed.append(v)
        if is_numeric:
            missing = sum(1 for v in parsed if v is None)
            numeric[name] = parsed
            schemas.append(ColumnSchema(name, NUMERIC, None, missing))
        else:
            vals = [None if _is_missing(c) else c for c in cells]
            missing = sum(1 for v in vals if v is None)
            categorical[name] = vals
            cats = sorted({v for v in vals if v is not None})
            schemas.append(ColumnSchema(name, CATEGORICAL, cats, missing))

    table = FlowTable(
        columns=list(header),
        label_column=label_column,
        numeric=numeric,
        categorical=categorical,
        labels=labels,
        n_rows=n_rows,
    )
    return table, schemas


# ---------------------------------------------------------------------------
# fit / transform
# ---------------------------------------------------------------------------

def _median(sorted_vals: list[float]) -> float:
    n = len(sorted_vals)
    mid = n // 2
    if n % 2 == 1:
        return sorted_vals[mid]
    return (sorted_vals[mid - 1] + sorted_vals[mid]) / 2.0


def fit_preprocessor(table: FlowTable) -> PreprocessState:
    """Fit imputation, standardization and encoding statistics.

    Numeric statistics are computed over non-missing values only; the std is
    the population std floored at 1e-12. Categorical modes break frequency
    ties lexicographically; category codes and the label map are assigned by
    sorted value.
    """
    if table.n_rows < 1:
        raise DataError("cannot fit a preprocessor on an empty table")
    feature_order = [c for c in table.columns if c != table.label_column]
    kinds: dict[str, str] = {}
    medians: dict[str, float] = {}
    means: dict[str, float] = {}
    stds: dict[str, float] = {}
    modes: dict[str, str] = {}
    category_maps: dict[str, dict[str, int]] = {}

    for name in feature_order:
        if name in table.numeric:
            kinds[name] = NUMERIC
            vals = [v for v in table.numeric[name] if v is not None]
            if not vals:
                raise DataError(f"column {name!r} has no observed values")
            medians[name] = _median(sorted(vals))
            mean = sum(vals) / len(vals)
            var = sum((v - mean) ** 2 for v in vals) / len(vals)
            means[name] = mean
            stds[name] = max(math.sqrt(var), 1e-12)
        else:
            kinds[name] = CATEGORICAL
            vals = [v for v in table.categorical[name] if v is not None]
            if not vals:
                raise DataError(f"column {name!r} has no observed values")
            counts: dict[str, int] = {}
            for v in vals:
                counts[v] = counts.get(v, 0) + 1
            top = max(counts.values())
            modes[name] = min(c for c, k in counts.items() if k == top)
            category_maps[name] = {c: i for i, c in enumerate(sorted(counts))}

    for i, lab in enumerate(table.labels):
        if lab is None:
            raise DataError(f"missing label in data row {i + 1}")
    class_names = sorted(set(table.labels))
    label_map = {c: i for i, c in enumerate(class_names)}
    return PreprocessState(
        feature_order=feature_order,
        kinds=kinds,
        medians=medians,
        means=means,
        stds=stds,
        modes=modes,
        category_maps=category_maps,
        label_map=label_map,
        class_names=class_names,
    )


def _encode_numeric(state: PreprocessState, name: str, v: float | None) -> float:
    if v is None:
        v = state.medians[name]
    return (v - state.means[name]) / state.stds[name]


def _encode_categorical(state: PreprocessState, name: str, v: str | None) -> float:
    if v is None:
        v = state.modes[name]
    cmap = state.category_maps[name]
    return float(cmap.get(v, len(cmap)))  # unseen -> reserved unknown code


def transform(state: PreprocessState, table: FlowTable) -> FeatureMatrix:
    """Apply fitted statistics: impute, standardize, encode, map labels.

    Only the fitted statistics are used; unseen feature categories map to
    the reserved unknown code, unseen label classes are an error.
    """
    missing_cols = [c for c in state.feature_order if c not in table.columns]
    if table.label_column not in table.columns:
        missing_cols.append(table.label_column)
    if missing_cols:
        raise DataError(f"columns missing from table: {missing_cols}")

    n, d = table.n_rows, state.input_dim
    x = Matrix.zeros(n, d)
    for j, name in enumerate(state.feature_order):
        kind = state.kinds[name]
        if kind == NUMERIC:
            col = table.numeric.get(name)
            if col is None:
                # fitted numeric but parsed categorical here: per-cell coercion
                raw = table.categorical[name]
                for i in range(n):
                    cell = raw[i]
                    v = None if cell is None else _parse_numeric(cell)
                    x.data[i * d + j] = _encode_numeric(state, name, v)
            else:
                for i in range(n):
                    x.data[i * d + j] = _encode_numeric(state, name, col[i])
        else:
            col = table.categorical.get(name)
            if col is None:
                raw_num = table.numeric[name]
                for i in range(n):
                    v = raw_num[i]
                    cell = None if v is None else repr(v)
                    x.data[i * d + j] = _encode_categorical(state, name, cell)
            else:
                for i in range(n):
                    x.data[i * d + j] = _encode_categorical(state, name, col[i])

    y: list[int] = []
    for i, lab in enumerate(table.labels):
        if lab is None:
            raise DataError(f"missing label in data row {i + 1}")
        code = state.label_map.get(lab)
        if code is None:
            raise DataError(f"unseen label class {lab!r} in data row {i + 1}")
        y.append(code)
    return FeatureMatrix(x, y, list(state.class_names))


def encode_feature_row(state: PreprocessState, cells: dict[str, str]) -> list[float]:
    """Encode one raw CSV row (feature cells keyed by column name).

    Used by the streaming prediction path; labels are not required.
    """
    out = []
    for name in state.feature_order:
        cell = cells[name]
        if state.kinds[name] == NUMERIC:
            if _is_missing(cell):
                v: float | None = None
            else:
                v = _parse_numeric(cell)
                if v is None:
                    raise DataError(f"value {cell!r} in numeric column {name!r} is not a number")
            out.append(_encode_numeric(state, name, v))
        else:
            v2 = None if _is_missing(cell) else cell
            out.append(_encode_categorical(state, name, v2))
    return out


# ---------------------------------------------------------------------------
# splitting and relabeling
# ---------------------------------------------------------------------------

def stratified_indices(labels: list, fraction: float, seed: int):
    """Per-class index split: round(fraction * n_c) rows go to the test side.

    Classes are processed in sorted order with a seeded shuffle, so the
    split is deterministic. Rounding is half-up, capped so every class keeps
    at least one training row. Returns (train_idx, test_idx), each ascending.
    """
    if not 0.0 < fraction < 1.0:
        raise DataError(f"split fraction must be in (0, 1), got {fraction}")
    by_class: dict = {}
    for i, lab in enumerate(labels):
        by_class.setdefault(lab, []).append(i)
    for lab, idx in by_class.items():
        if len(idx) < 2:
            raise DataError(f"class {lab!r} has a single sample; cannot split")
    rng = RandSource(seed)
    train: list[int] = []
    test: list[int] = []
    for lab in sorted(by_class):
        idx = by_class[lab]
        rng.shuffle(idx)
        n_test = min(int(fraction * len(idx) + 0.5), len(idx) - 1)
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    train.sort()
    test.sort()
    return train, test


def stratified_split(fm: FeatureMatrix, test_fraction: float, seed: int):
    """Disjoint, exhaustive (train, test) split preserving class balance."""
    train_idx, test_idx = stratified_indices(fm.y, test_fraction, seed)
    return fm.gather(train_idx), fm.gather(test_idx)


def to_binary_labels(fm: FeatureMatrix, benign_class_name: str) -> FeatureMatrix:
    """Collapse to Benign (0) vs Anomaly (1); features are untouched."""
    if benign_class_name not in fm.class_names:
        raise DataError(
            f"benign class {benign_class_name!r} not in classes {fm.class_names}"
        )
    benign_code = fm.class_names.index(benign_class_name)
    y = [0 if code == benign_code else 1 for code in fm.y]
    if all(v == 0 for v in y):
        raise DataError("all rows are benign; nothing to detect")
    return FeatureMatrix(fm.x, y, ["Benign", "Anomaly"])


def binary_label_state(state: PreprocessState, benign_class_name: str) -> PreprocessState:
    """A copy of the state whose label map collapses to Benign/Anomaly."""
    if benign_class_name not in state.label_map:
        raise DataError(
            f"benign class {benign_class_name!r} not in classes {state.class_names}"
        )
    label_map = {name: (0 if name == benign_class_name else 1)
                 for name in state.label_map}
    return PreprocessState(
        feature_order=list(state.feature_order),
        kinds=dict(state.kinds),
        medians=dict(state.medians),
        means=dict(state.means),
        stds=dict(state.stds),
        modes=dict(state.modes),
        category_maps={c: dict(m) for c, m in state.category_maps.items()},
        label_map=label_map,
        class_names=["Benign", "Anomaly"],
    )


# ---------------------------------------------------------------------------
# synthetic flow data
# ---------------------------------------------------------------------------

def _orthonormal_directions(k: int, d: int, rng: RandSource) -> list[array]:
    """K seeded unit directions; Gram-Schmidt orthonormalized when k <= d, so
    class centers are equidistant and a separable dataset stays separable for
    every seed."""
    dirs: list[array] = []
    orthogonalize = k <= d
    for _ in range(k):
        v = zeros_buf(d)
        rng.fill_normal(v)
        if orthogonalize:
            for prev in dirs:
                dot = sum(v[j] * prev[j] for j in range(d))
                for j in range(d):
                    v[j] -= dot * prev[j]
        norm = math.sqrt(sum(x * x for x in v))
        if norm < 1e-9:
            # essentially impossible for Gaussian draws; keep a safe fallback
            v[len(dirs) % d] = 1.0
            norm = 1.0
        for j in range(d):
            v[j] /= norm
        dirs.append(v)
    return dirs


def _class_counts(n: int, k: int, profile: str) -> list[int]:
    if profile == "uniform":
        weights = [1.0 / k] * k
    elif profile == "skewed":
        # majority benign-style class plus geometrically shrinking attacks
        rest = [0.75 ** i for i in range(k - 1)]
        total = sum(rest)
        weights = [0.5442] + [0.4558 * w / total for w in rest]
    else:
        raise ValueError(f"unknown imbalance profile {profile!r}")
    counts = [int(n * w) for w in weights]
    remainders = sorted(
        range(k), key=lambda i: (-(n * weights[i] - counts[i]), i)
    )
    short = n - sum(counts)
    for i in range(short):
        counts[remainders[i % k]] += 1
    return counts


def synth_class_names(k: int) -> list[str]:
    return ["Benign"] + [f"Attack_{i:02d}" for i in range(1, k)]


def synth_dataset(path: str, classes: int, features: int, rows: int,
                  separation: float, profile: str = "uniform",
                  seed: int = 0) -> str:
    """Write a Gaussian-cluster CSV: unit-variance clusters centered at
    separation * (seeded orthonormal directions), one categorical column
    whose class alignment scales with the separation (uniform noise at
    separation 0, so a zero-separation dataset carries no signal at all),
    and 5% blanked cells in the first numeric column.

    Identical arguments produce byte-identical files.
    """
    if classes < 2 or features < 2 or rows < 10 * classes:
        raise ValueError(
            f"invalid synth sizes: classes={classes}, features={features}, "
            f"rows={rows} (need >= 2, >= 2, >= 10*classes)"
        )
    rng = RandSource(seed)
    dirs = _orthonormal_directions(classes, features, rng)
    means = [[separation * v[j] for j in range(features)] for v in dirs]
    counts = _class_counts(rows, classes, profile)
    label_seq: list[int] = []
    for c, cnt in enumerate(counts):
        label_seq.extend([c] * cnt)
    rng.shuffle(label_seq)
    names = synth_class_names(classes)

    header = [f"f{j:02d}" for j in range(features)] + ["proto", "label"]
    feat_buf = zeros_buf(features)
    align_p = 0.75 * min(separation / 4.0, 1.0)  # 0 at separation 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for c in label_seq:
            rng.fill_normal(feat_buf)
            cells = [repr(means[c][j] + feat_buf[j]) for j in range(features)]
            if rng.uniform() < 0.05:
                cells[0] = ""
            u = rng.uniform()
            if u < align_p:
                proto = _PROTO_VALUES[c % 3]
            else:
                spill = (u - align_p) / (1.0 - align_p)
                proto = _PROTO_VALUES[min(int(spill * 3.0), 2)]
            writer.writerow(cells + [proto, names[c]])
    return path


def nearest_centroid_accuracy(fm: FeatureMatrix) -> float:
    """Accuracy of a 1-nearest-centroid classifier with per-class centroids
    fitted on the same data; certifies cluster separability."""
    n, d = fm.x.shape
    k = len(fm.class_names)
    centroids = Matrix.zeros(k, d)
    counts = [0] * k
    for i in range(n):
        c = fm.y[i]
        counts[c] += 1
        base = i * d
        for j in range(d):
            centroids.data[c * d + j] += fm.x.data[base + j]
    for c in range(k):
        if counts[c]:
            for j in range(d):
                centroids.data[c * d + j] /= counts[c]
    # argmin_c |x - mu_c|^2 = argmin_c (|mu_c|^2 - 2 x . mu_c)
    dots = Matrix.zeros(n, k)
    K.bmm(fm.x.data, centroids.data, dots.data, 1, n, d, k, False, True)
    sq = [sum(centroids.data[c * d + j] ** 2 for j in range(d)) for c in range(k)]
    hits = 0
    for i in range(n):
        best, best_v = 0, sq[0] - 2.0 * dots.data[i * k]
        for c in range(1, k):
            v = sq[c] - 2.0 * dots.data[i * k + c]
            if v < best_v:
                best, best_v = c, v
        if best == fm.y[i]:
            hits += 1
    return hits / n
