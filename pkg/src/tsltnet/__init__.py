"""tsltnet: lightweight temporal-spatial transformer for flow-record intrusion detection.

Everything is built on a tiny dense-matrix core with hand-derived backward
passes; no tensor framework is involved. The hot kernels run through a
compiled extension when available and an identical pure-Python fallback
otherwise (see ``tsltnet.backend``).
"""

from .backend import BACKEND_NAME, COMPILED
from .numcore import Matrix, RandSource, ShapeError, matmul, mean_over_rows, rowwise_softmax
from .models import (
    ModelBundle,
    build_mlp,
    build_tslt,
    count_params,
    load_bundle,
    save_bundle,
)
from .pipeline import (
    FeatureMatrix,
    PreprocessState,
    fit_preprocessor,
    read_csv,
    stratified_split,
    synth_dataset,
    to_binary_labels,
    transform,
)
from .trainer import AdamState, TrainConfig, TrainHistory, adam_step, early_stop_update, train
from .metrics import ConfusionMatrix, EvalReport, argmax_labels, confusion, report

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAME",
    "COMPILED",
    "Matrix",
    "RandSource",
    "ShapeError",
    "matmul",
    "mean_over_rows",
    "rowwise_softmax",
    "ModelBundle",
    "build_mlp",
    "build_tslt",
    "count_params",
    "load_bundle",
    "save_bundle",
    "FeatureMatrix",
    "PreprocessState",
    "fit_preprocessor",
    "read_csv",
    "stratified_split",
    "synth_dataset",
    "to_binary_labels",
    "transform",
    "AdamState",
    "TrainConfig",
    "TrainHistory",
    "adam_step",
    "early_stop_update",
    "train",
    "ConfusionMatrix",
    "EvalReport",
    "argmax_labels",
    "confusion",
    "report",
    "__version__",
]
