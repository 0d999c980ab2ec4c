"""Training loop: Adam, minibatches, early stopping with best-weight restore.

Everything is driven by one seed: the validation carve-out, weight init,
epoch shuffles and dropout each get a derived stream, so identical configs
reproduce identical histories and identical final weights bit for bit.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass, field

from .backend import kernels as K
from .numcore import Matrix, RandSource, ShapeError, zeros_buf
from .layers import NonFiniteLossError
from .models import ModelBundle, build_model, predict_probs
from .metrics import argmax_labels
from .pipeline import DataError, FeatureMatrix, PreprocessState, stratified_indices


class TrainingDivergedError(ArithmeticError):
    """Loss or gradients became non-finite during optimization."""


@dataclass
class TrainConfig:
    batch_size: int = 128
    max_epochs: int = 50
    patience: int = 5
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")


class AdamState:
    """First/second moment accumulators mirroring the trainable tensors."""

    def __init__(self, tensors: list[tuple[str, Matrix]]):
        self.m = {name: zeros_buf(len(t.data)) for name, t in tensors}
        self.v = {name: zeros_buf(len(t.data)) for name, t in tensors}
        self.t = 0


def adam_step(tensors: list[tuple[str, Matrix]], grads: dict,
              state: AdamState, cfg: TrainConfig) -> None:
    """One in-place Adam update over every tensor.

    m <- b1*m + (1-b1)*g; v <- b2*v + (1-b2)*g^2; bias-corrected m_hat/v_hat;
    p <- p - lr * m_hat / (sqrt(v_hat) + eps). Non-finite gradients abort
    with the offending tensor named.
    """
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, p in tensors:
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(
                f"gradient for {name} has shape {g.shape}, parameter is {p.shape}"
            )
        if K.has_nonfinite(g.data, len(g.data)):
            raise TrainingDivergedError(f"non-finite gradient in tensor {name}")
        K.adam_step(p.data, g.data, state.m[name], state.v[name], len(p.data),
                    cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon,
                    bc1, bc2)


def early_stop_update(best_loss: float, stale_count: int, new_val_loss: float,
                      patience: int):
    """Strict-improvement early stopping bookkeeping.

    Returns (decision, best_loss, stale_count, improved); decision is
    "continue" or "stop". Equal losses count as non-improvement, so a
    plateau of length ``patience`` stops training.
    """
    if new_val_loss < best_loss:
        return "continue", new_val_loss, 0, True
    stale_count += 1
    if stale_count >= patience:
        return "stop", best_loss, stale_count, False
    return "continue", best_loss, stale_count, False


@dataclass
class EpochRecord:
    epoch: int  # 1-based
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0  # 1-based epoch whose weights the bundle carries
    stop_reason: str = ""

    def to_json_list(self) -> list[dict]:
        return [
            {"epoch": r.epoch, "train_loss": r.train_loss,
             "train_acc": r.train_acc, "val_loss": r.val_loss,
             "val_acc": r.val_acc}
            for r in self.records
        ]


def _onehot(y: list[int], k: int) -> Matrix:
    m = Matrix.zeros(len(y), k)
    for i, c in enumerate(y):
        m.data[i * k + c] = 1.0
    return m


def _gather_x(fm: FeatureMatrix, indices: list[int]) -> Matrix:
    idx = array("q", indices)
    out = Matrix.zeros(len(indices), fm.x.cols)
    K.gather_rows(fm.x.data, fm.x.cols, idx, out.data)
    return out


def _eval_loss_acc(model, x: Matrix, onehot: Matrix, y: list[int]):
    from .layers import cross_entropy_from_probs

    probs = predict_probs(model, x)
    loss, _ = cross_entropy_from_probs(probs, onehot)
    pred = argmax_labels(probs)
    acc = sum(1 for a, b in zip(pred, y) if a == b) / len(y) if y else 0.0
    return loss, acc


def train(arch: str, data: FeatureMatrix, cfg: TrainConfig,
          task: str = "multiclass",
          preprocess: PreprocessState | None = None):
    """Fit a model on ``data`` and return (bundle, history).

    A stratified ``validation_fraction`` carve-out drives early stopping (the
    held-out test split must never leak into stopping decisions). Each epoch
    reshuffles, visits every training sample exactly once (final partial
    batch included), and runs forward/backward/adam per minibatch. The
    returned bundle carries the best-validation-loss weights.
    """
    if len(set(data.y)) < 2:
        raise DataError("training data must contain at least 2 classes")
    k = len(data.class_names)
    base = RandSource(cfg.seed)
    val_seed = base.derive(1).seed
    init_seed = base.derive(2).seed
    rng_shuffle = base.derive(3)
    rng_dropout = base.derive(4)

    train_idx, val_idx = stratified_indices(data.y, cfg.validation_fraction,
                                            val_seed)
    train_fm = data.gather(train_idx)
    val_fm = data.gather(val_idx)
    val_onehot = _onehot(val_fm.y, k)

    model = build_model(arch, data.x.cols, k, init_seed)
    tensors = model.trainable()
    state = AdamState(tensors)

    history = TrainHistory()
    best_loss = math.inf
    stale = 0
    best_snapshot: dict[str, array] | None = None
    best_epoch = 0
    stop_reason = "max_epochs"
    order = list(range(train_fm.n))

    for epoch in range(1, cfg.max_epochs + 1):
        rng_shuffle.shuffle(order)
        loss_sum = 0.0
        hit_sum = 0
        for start in range(0, len(order), cfg.batch_size):
            batch_idx = order[start:start + cfg.batch_size]
            xb = _gather_x(train_fm, batch_idx)
            yb = [train_fm.y[i] for i in batch_idx]
            probs, cache = model.forward(xb, train=True, rng=rng_dropout)
            try:
                loss, grads = model.backward(cache, _onehot(yb, k))
            except NonFiniteLossError as exc:
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, "
                    f"batch {start // cfg.batch_size}: {exc}"
                ) from exc
            adam_step(tensors, grads, state, cfg)
            loss_sum += loss * len(batch_idx)
            pred = argmax_labels(probs)
            hit_sum += sum(1 for a, b in zip(pred, yb) if a == b)

        val_loss, val_acc = _eval_loss_acc(model, val_fm.x, val_onehot, val_fm.y)
        history.records.append(EpochRecord(
            epoch=epoch,
            train_loss=loss_sum / train_fm.n,
            train_acc=hit_sum / train_fm.n,
            val_loss=val_loss,
            val_acc=val_acc,
        ))
        decision, best_loss, stale, improved = early_stop_update(
            best_loss, stale, val_loss, cfg.patience)
        if improved:
            best_snapshot = {name: array("d", t.data)
                             for name, t in model.state_tensors()}
            best_epoch = epoch
        if decision == "stop":
            stop_reason = "early_stop"
            break

    if best_snapshot is not None:
        for name, t in model.state_tensors():
            t.data[:] = best_snapshot[name]
    history.best_epoch = best_epoch
    history.stop_reason = stop_reason

    bundle = ModelBundle(arch=arch, task=task, model=model,
                         preprocess=preprocess,
                         class_names=list(data.class_names))
    return bundle, history
