"""Differentiable layer kernels.

Each layer implements a forward pass and a hand-derived analytic backward
pass over the Matrix type; there is no autograd anywhere. Backward passes
are verified against central finite differences (see
``finite_difference_check``). Forward returns ``(output, cache)`` and
backward consumes the cache explicitly, so inference-mode forwards never
mutate the layer and are safe to share across threads.
"""

from __future__ import annotations

import math

from .backend import kernels as K
from .numcore import Matrix, RandSource, ShapeError, zeros_buf


class NonFiniteLossError(ArithmeticError):
    """Raised when a loss evaluation produces NaN or infinity."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


# ---------------------------------------------------------------------------
# dense (fully connected)
# ---------------------------------------------------------------------------

class Dense:
    """Fully connected layer: y = act(x @ W.T + b), W stored (out x in).

    activation is "relu" or "none"; the ReLU subgradient at exactly 0 is 0.
    """

    def __init__(self, weights: Matrix, bias: Matrix, activation: str = "none"):
        if activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {activation!r}")
        _require(
            bias.rows == 1 and bias.cols == weights.rows,
            f"bias shape {bias.shape} does not match weight shape {weights.shape}",
        )
        self.weights = weights
        self.bias = bias
        self.activation = activation

    @classmethod
    def glorot(cls, in_dim: int, out_dim: int, rng: RandSource,
               activation: str = "none") -> "Dense":
        """Uniform Glorot init: W ~ U(-limit, limit), limit = sqrt(6/(in+out)); b = 0."""
        w = Matrix.zeros(out_dim, in_dim)
        rng.fill_uniform(w.data)
        limit = math.sqrt(6.0 / (in_dim + out_dim))
        K.affine(w.data, 2.0 * limit, -limit, w.data, len(w.data))
        return cls(w, Matrix.zeros(1, out_dim), activation)

    @property
    def in_dim(self) -> int:
        return self.weights.cols

    @property
    def out_dim(self) -> int:
        return self.weights.rows

    def forward(self, x: Matrix):
        _require(
            x.cols == self.in_dim,
            f"dense expects {self.in_dim} input columns, got shape {x.shape}",
        )
        n = x.rows
        z = Matrix.zeros(n, self.out_dim)
        K.bmm(x.data, self.weights.data, z.data, 1, n, self.in_dim, self.out_dim,
              False, True)
        K.add_row_vec(z.data, self.bias.data, z.data, n, self.out_dim)
        if self.activation == "relu":
            y = Matrix.zeros(n, self.out_dim)
            K.relu_fwd(z.data, y.data, len(z.data))
        else:
            y = z
        return y, (x, z)

    def backward(self, cache, gout: Matrix, need_dx: bool = True):
        """Returns (dx, dweights, dbias); dx is None when need_dx is False."""
        x, z = cache
        n = x.rows
        _require(
            gout.shape == (n, self.out_dim),
            f"upstream gradient shape {gout.shape} does not match output ({n}, {self.out_dim})",
        )
        if self.activation == "relu":
            dz = Matrix.zeros(n, self.out_dim)
            K.relu_bwd(z.data, gout.data, dz.data, len(z.data))
        else:
            dz = gout
        dw = Matrix.zeros(self.out_dim, self.in_dim)
        K.bmm(dz.data, x.data, dw.data, 1, self.out_dim, n, self.in_dim, True, False)
        db = Matrix.zeros(1, self.out_dim)
        K.colsum(dz.data, db.data, n, self.out_dim)
        dx = None
        if need_dx:
            dx = Matrix.zeros(n, self.in_dim)
            K.bmm(dz.data, self.weights.data, dx.data, 1, n, self.out_dim,
                  self.in_dim, False, False)
        return dx, dw, db


# ---------------------------------------------------------------------------
# layer normalization (per row, over the feature axis)
# ---------------------------------------------------------------------------

class LayerNorm:
    """Normalize each row over its features, then scale/shift per feature."""

    def __init__(self, dim: int, epsilon: float = 1e-3):
        self.gamma = Matrix.full(1, dim, 1.0)
        self.beta = Matrix.zeros(1, dim)
        self.epsilon = epsilon

    @property
    def dim(self) -> int:
        return self.gamma.cols

    def forward(self, h: Matrix):
        _require(h.cols == self.dim, f"layernorm dim {self.dim}, got shape {h.shape}")
        n = h.rows
        out = Matrix.zeros(n, self.dim)
        xhat = Matrix.zeros(n, self.dim)
        inv_std = zeros_buf(n)
        K.layernorm_fwd(h.data, self.gamma.data, self.beta.data, self.epsilon,
                        out.data, xhat.data, inv_std, n, self.dim)
        return out, (xhat, inv_std)

    def backward(self, cache, gout: Matrix):
        xhat, inv_std = cache
        n = xhat.rows
        _require(gout.shape == xhat.shape,
                 f"upstream gradient shape {gout.shape} does not match {xhat.shape}")
        dx = Matrix.zeros(n, self.dim)
        dgamma = Matrix.zeros(1, self.dim)
        dbeta = Matrix.zeros(1, self.dim)
        K.layernorm_bwd(xhat.data, inv_std, self.gamma.data, gout.data,
                        dx.data, dgamma.data, dbeta.data, n, self.dim)
        return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# multi-head self-attention
# ---------------------------------------------------------------------------

class SelfAttention:
    """Multi-head self-attention over a fixed-length sequence.

    Query, key and value are projections of the same input (model_dim ->
    heads*key_dim each); per head, attention = softmax(Q K^T / sqrt(key_dim))
    applied to V; heads are concatenated and output-projected back to
    model_dim. There is no positional encoding, so the layer is
    permutation-equivariant over sequence positions.
    """

    def __init__(self, heads: int = 2, key_dim: int = 4, model_dim: int = 8,
                 seq_len: int = 16):
        _require(heads * key_dim == model_dim,
                 f"heads*key_dim must equal model_dim ({heads}*{key_dim} != {model_dim})")
        self.heads = heads
        self.key_dim = key_dim
        self.model_dim = model_dim
        self.seq_len = seq_len
        proj = heads * key_dim
        self.wq = Matrix.zeros(proj, model_dim)
        self.bq = Matrix.zeros(1, proj)
        self.wk = Matrix.zeros(proj, model_dim)
        self.bk = Matrix.zeros(1, proj)
        self.wv = Matrix.zeros(proj, model_dim)
        self.bv = Matrix.zeros(1, proj)
        self.wo = Matrix.zeros(model_dim, proj)
        self.bo = Matrix.zeros(1, model_dim)

    @classmethod
    def glorot(cls, rng: RandSource, heads: int = 2, key_dim: int = 4,
               model_dim: int = 8, seq_len: int = 16) -> "SelfAttention":
        layer = cls(heads, key_dim, model_dim, seq_len)
        for w in (layer.wq, layer.wk, layer.wv, layer.wo):
            rng.fill_uniform(w.data)
            limit = math.sqrt(6.0 / (w.rows + w.cols))
            K.affine(w.data, 2.0 * limit, -limit, w.data, len(w.data))
        return layer

    def _project(self, h: Matrix, w: Matrix, b: Matrix) -> Matrix:
        out = Matrix.zeros(h.rows, w.rows)
        K.bmm(h.data, w.data, out.data, 1, h.rows, w.cols, w.rows, False, True)
        K.add_row_vec(out.data, b.data, out.data, h.rows, w.rows)
        return out

    def forward(self, h: Matrix):
        """Single sequence of shape (seq_len, model_dim)."""
        _require(h.shape == (self.seq_len, self.model_dim),
                 f"attention expects ({self.seq_len}, {self.model_dim}), got {h.shape}")
        return self.forward_batch(h, 1)

    def forward_batch(self, h: Matrix, batch: int):
        """h stacks `batch` sequences: shape (batch*seq_len, model_dim)."""
        t, d, nh, hd = self.seq_len, self.model_dim, self.heads, self.key_dim
        _require(h.shape == (batch * t, d),
                 f"attention batch expects ({batch * t}, {d}), got {h.shape}")
        q = self._project(h, self.wq, self.bq)
        k_ = self._project(h, self.wk, self.bk)
        v = self._project(h, self.wv, self.bv)
        blocks = batch * nh
        qh = zeros_buf(blocks * t * hd)
        kh = zeros_buf(blocks * t * hd)
        vh = zeros_buf(blocks * t * hd)
        K.split_heads(q.data, qh, batch, t, nh, hd)
        K.split_heads(k_.data, kh, batch, t, nh, hd)
        K.split_heads(v.data, vh, batch, t, nh, hd)
        scores = zeros_buf(blocks * t * t)
        K.bmm(qh, kh, scores, blocks, t, hd, t, False, True)
        K.affine(scores, 1.0 / math.sqrt(hd), 0.0, scores, len(scores))
        attn = zeros_buf(blocks * t * t)
        K.rowwise_softmax(scores, attn, blocks * t, t)
        ctx = zeros_buf(blocks * t * hd)
        K.bmm(attn, vh, ctx, blocks, t, t, hd, False, False)
        ctx_m = Matrix.zeros(batch * t, d)
        K.merge_heads(ctx, ctx_m.data, batch, t, nh, hd)
        out = self._project(ctx_m, self.wo, self.bo)
        cache = {"h": h, "qh": qh, "kh": kh, "vh": vh, "attn": attn,
                 "ctx_m": ctx_m, "batch": batch}
        return out, cache

    def backward(self, cache, gout: Matrix):
        """Returns (dh, grads) with grads keyed wq/bq/wk/bk/wv/bv/wo/bo."""
        t, d, nh, hd = self.seq_len, self.model_dim, self.heads, self.key_dim
        batch = cache["batch"]
        h, qh, kh, vh = cache["h"], cache["qh"], cache["kh"], cache["vh"]
        attn, ctx_m = cache["attn"], cache["ctx_m"]
        rows = batch * t
        blocks = batch * nh
        _require(gout.shape == (rows, d),
                 f"upstream gradient shape {gout.shape} does not match ({rows}, {d})")

        # output projection
        dctx_m = Matrix.zeros(rows, d)
        K.bmm(gout.data, self.wo.data, dctx_m.data, 1, rows, d, d, False, False)
        dwo = Matrix.zeros(d, d)
        K.bmm(gout.data, ctx_m.data, dwo.data, 1, d, rows, d, True, False)
        dbo = Matrix.zeros(1, d)
        K.colsum(gout.data, dbo.data, rows, d)

        # attention core, per (sequence, head) block
        dctx = zeros_buf(blocks * t * hd)
        K.split_heads(dctx_m.data, dctx, batch, t, nh, hd)
        dattn = zeros_buf(blocks * t * t)
        K.bmm(dctx, vh, dattn, blocks, t, hd, t, False, True)
        dvh = zeros_buf(blocks * t * hd)
        K.bmm(attn, dctx, dvh, blocks, t, t, hd, True, False)
        dscores = zeros_buf(blocks * t * t)
        K.softmax_bwd_rows(attn, dattn, dscores, blocks * t, t)
        K.affine(dscores, 1.0 / math.sqrt(hd), 0.0, dscores, len(dscores))
        dqh = zeros_buf(blocks * t * hd)
        K.bmm(dscores, kh, dqh, blocks, t, t, hd, False, False)
        dkh = zeros_buf(blocks * t * hd)
        K.bmm(dscores, qh, dkh, blocks, t, t, hd, True, False)

        # fold heads back and push through the q/k/v projections
        grads = {"wo": dwo, "bo": dbo}
        dh = Matrix.zeros(rows, d)
        for name, dsplit, w in (("q", dqh, self.wq), ("k", dkh, self.wk),
                                ("v", dvh, self.wv)):
            dp = Matrix.zeros(rows, nh * hd)
            K.merge_heads(dsplit, dp.data, batch, t, nh, hd)
            dw = Matrix.zeros(nh * hd, d)
            K.bmm(dp.data, h.data, dw.data, 1, nh * hd, rows, d, True, False)
            db = Matrix.zeros(1, nh * hd)
            K.colsum(dp.data, db.data, rows, nh * hd)
            grads["w" + name] = dw
            grads["b" + name] = db
            dh_part = Matrix.zeros(rows, d)
            K.bmm(dp.data, w.data, dh_part.data, 1, rows, nh * hd, d, False, False)
            K.add(dh.data, dh_part.data, dh.data, len(dh.data))
        return dh, grads


# ---------------------------------------------------------------------------
# pooling over the sequence axis
# ---------------------------------------------------------------------------

def global_average_pool(h: Matrix) -> Matrix:
    """Mean over rows: (t, d) -> (1, d)."""
    _require(h.rows >= 1, "global_average_pool needs at least one row")
    out = Matrix.zeros(1, h.cols)
    K.block_mean_rows(h.data, out.data, 1, h.rows, h.cols)
    return out


def global_average_pool_backward(gout: Matrix, rows: int) -> Matrix:
    """Distribute gout/rows to each of the pooled input rows."""
    dh = Matrix.zeros(rows, gout.cols)
    K.block_spread_rows(gout.data, dh.data, 1, rows, gout.cols, 1.0 / rows)
    return dh


def pool_blocks(h: Matrix, batch: int, t: int) -> Matrix:
    """Batched pooling: (batch*t, d) -> (batch, d)."""
    out = Matrix.zeros(batch, h.cols)
    K.block_mean_rows(h.data, out.data, batch, t, h.cols)
    return out


def pool_blocks_backward(gout: Matrix, batch: int, t: int) -> Matrix:
    dh = Matrix.zeros(batch * t, gout.cols)
    K.block_spread_rows(gout.data, dh.data, batch, t, gout.cols, 1.0 / t)
    return dh


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------

class Dropout:
    """Inverted dropout: training zeroes entries with probability ``rate``
    and scales survivors by 1/(1-rate); inference is the exact identity and
    consumes no randomness."""

    def __init__(self, rate: float = 0.3):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x: Matrix, rng: RandSource | None, train: bool):
        """Returns (y, mask); mask holds the applied multiplier, None at inference."""
        if not train:
            return x, None
        if rng is None:
            raise ValueError("train-mode dropout needs a random source")
        y = Matrix.zeros(x.rows, x.cols)
        mask = Matrix.zeros(x.rows, x.cols)
        rng.dropout(x.data, y.data, mask.data, self.rate)
        return y, mask

    def backward(self, mask: Matrix | None, gout: Matrix) -> Matrix:
        if mask is None:
            return gout
        dx = Matrix.zeros(gout.rows, gout.cols)
        K.mul(gout.data, mask.data, dx.data, len(gout.data))
        return dx


# ---------------------------------------------------------------------------
# batch normalization (per column, over the batch axis)
# ---------------------------------------------------------------------------

class BatchNorm:
    """Batch normalization with running statistics for inference.

    Training normalizes each column by the batch mean and population
    variance and folds those statistics into the running buffers with
    ``running = momentum * running + (1 - momentum) * batch``.
    """

    def __init__(self, dim: int, momentum: float = 0.99, epsilon: float = 1e-3):
        self.gamma = Matrix.full(1, dim, 1.0)
        self.beta = Matrix.zeros(1, dim)
        self.running_mean = Matrix.zeros(1, dim)
        self.running_var = Matrix.full(1, dim, 1.0)
        self.momentum = momentum
        self.epsilon = epsilon

    @property
    def dim(self) -> int:
        return self.gamma.cols

    def forward(self, x: Matrix, train: bool):
        _require(x.cols == self.dim, f"batchnorm dim {self.dim}, got shape {x.shape}")
        n = x.rows
        out = Matrix.zeros(n, self.dim)
        if not train:
            K.batchnorm_fwd_infer(x.data, self.gamma.data, self.beta.data,
                                  self.running_mean.data, self.running_var.data,
                                  self.epsilon, out.data, n, self.dim)
            return out, None
        if n < 2:
            raise ValueError(f"train-mode batchnorm needs a batch of >= 2 rows, got {n}")
        xhat = Matrix.zeros(n, self.dim)
        mean = zeros_buf(self.dim)
        var = zeros_buf(self.dim)
        inv_std = zeros_buf(self.dim)
        K.batchnorm_fwd_train(x.data, self.gamma.data, self.beta.data,
                              self.epsilon, out.data, xhat.data, mean, var,
                              inv_std, n, self.dim)
        mom = self.momentum
        for j in range(self.dim):
            self.running_mean.data[j] = mom * self.running_mean.data[j] + (1.0 - mom) * mean[j]
            self.running_var.data[j] = mom * self.running_var.data[j] + (1.0 - mom) * var[j]
        return out, (xhat, inv_std)

    def backward(self, cache, gout: Matrix):
        if cache is None:
            raise ValueError("batchnorm backward needs a train-mode cache")
        xhat, inv_std = cache
        n = xhat.rows
        _require(gout.shape == xhat.shape,
                 f"upstream gradient shape {gout.shape} does not match {xhat.shape}")
        dx = Matrix.zeros(n, self.dim)
        dgamma = Matrix.zeros(1, self.dim)
        dbeta = Matrix.zeros(1, self.dim)
        K.batchnorm_bwd(xhat.data, inv_std, self.gamma.data, gout.data,
                        dx.data, dgamma.data, dbeta.data, n, self.dim)
        return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def cross_entropy_from_probs(probs: Matrix, onehot: Matrix):
    """Mean cross-entropy given softmax outputs.

    Returns (loss, dlogits) where dlogits = (probs - onehot) / n is the fused
    gradient with respect to the pre-softmax logits.
    """
    _require(probs.shape == onehot.shape,
             f"probs shape {probs.shape} does not match targets {onehot.shape}")
    n, k = probs.shape
    grad = Matrix.zeros(n, k)
    loss, bad_row = K.softmax_xent(probs.data, onehot.data, grad.data, n, k)
    if bad_row >= 0:
        raise ValueError(f"target row {bad_row} is not one-hot")
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"cross-entropy loss is {loss}")
    return loss, grad


def softmax_cross_entropy(logits: Matrix, onehot: Matrix):
    """Softmax + mean cross-entropy; returns (loss, dlogits)."""
    from .numcore import rowwise_softmax

    probs = rowwise_softmax(logits)
    return cross_entropy_from_probs(probs, onehot)


# ---------------------------------------------------------------------------
# gradient verification harness
# ---------------------------------------------------------------------------

def finite_difference_check(loss_fn, tensors, grads, h: float = 1e-5,
                            samples: int | None = None,
                            rng: RandSource | None = None,
                            floor: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    loss_fn recomputes the scalar loss from the current tensor values;
    tensors is a list of (name, Matrix) perturbed in place; grads maps each
    name to its analytic gradient. When ``samples`` is given, that many
    coordinates are probed (drawn without replacement via ``rng``, or evenly
    spaced when rng is None). Returns the worst relative error
    |analytic - fd| / max(|analytic|, |fd|, floor).

    ``floor`` keeps coordinates whose true gradient is structurally zero
    (e.g. a key-projection bias under softmax shift invariance) from
    amplifying finite-difference roundoff, which is ~1e-11 for unit-scale
    losses at h=1e-5; real defects above the floor still surface.
    """
    coords = []
    for name, t in tensors:
        for i in range(len(t.data)):
            coords.append((name, t, i))
    if samples is not None and samples < len(coords):
        if rng is not None:
            chosen = []
            remaining = list(range(len(coords)))
            for _ in range(samples):
                pick = rng.randint_below(len(remaining))
                chosen.append(coords[remaining.pop(pick)])
        else:
            step = len(coords) / samples
            chosen = [coords[int(i * step)] for i in range(samples)]
    else:
        chosen = coords
    grad_by_name = dict(grads)
    worst = 0.0
    for name, t, i in chosen:
        orig = t.data[i]
        t.data[i] = orig + h
        lp = loss_fn()
        t.data[i] = orig - h
        lm = loss_fn()
        t.data[i] = orig
        if not (math.isfinite(lp) and math.isfinite(lm)):
            raise NonFiniteLossError(f"non-finite loss while probing {name}[{i}]")
        fd = (lp - lm) / (2.0 * h)
        an = grad_by_name[name].data[i]
        err = abs(an - fd) / max(abs(an), abs(fd), floor)
        if err > worst:
            worst = err
    return worst
