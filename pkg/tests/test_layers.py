import math

import pytest

from tsltnet.numcore import Matrix, RandSource, ShapeError, matmul, mean_over_rows
from tsltnet.layers import (
    BatchNorm,
    Dense,
    Dropout,
    LayerNorm,
    SelfAttention,
    cross_entropy_from_probs,
    finite_difference_check,
    global_average_pool,
    global_average_pool_backward,
    softmax_cross_entropy,
)

SEEDS = range(20)


def rand_mat(rng: RandSource, r: int, c: int, std: float = 1.0) -> Matrix:
    m = Matrix.zeros(r, c)
    rng.fill_normal(m.data, 0.0, std)
    return m


def weighted_loss(y: Matrix, weights: Matrix) -> float:
    """sum(w * y): a loss with dense, generically nonzero gradients."""
    return sum(w * v for w, v in zip(weights.data, y.data))


# ---------------------------------------------------------------------------
# dense
# ---------------------------------------------------------------------------

def test_dense_identity_weights():
    layer = Dense(Matrix.identity(3), Matrix.zeros(1, 3))
    x = Matrix.from_rows([[1.5, -2.0, 0.25], [0.0, 4.0, -1.0]])
    y, _ = layer.forward(x)
    assert y == x


def test_dense_relu_clamps_negatives():
    layer = Dense(Matrix.identity(2), Matrix.zeros(1, 2), activation="relu")
    y, _ = layer.forward(Matrix.from_rows([[-1.0, 2.0]]))
    assert y.tolist() == [[0.0, 2.0]]


def test_dense_shape_error():
    layer = Dense(Matrix.zeros(4, 5), Matrix.zeros(1, 4))
    with pytest.raises(ShapeError):
        layer.forward(Matrix.zeros(2, 3))


def test_relu_subgradient_at_zero_is_zero():
    from array import array

    from tsltnet.backend import kernels as K

    z = array("d", [-1.0, 0.0, 2.0])
    g = array("d", [5.0, 5.0, 5.0])
    out = array("d", bytes(24))
    K.relu_bwd(z, g, out, 3)
    assert list(out) == [0.0, 0.0, 5.0]


@pytest.mark.parametrize("activation", ["none", "relu"])
def test_dense_gradients_match_finite_differences(activation):
    worst = 0.0
    for seed in SEEDS:
        rng = RandSource(seed)
        layer = Dense.glorot(5, 4, rng, activation=activation)
        rng.fill_normal(layer.bias.data, 0.0, 0.3)
        x = rand_mat(rng, 3, 5)
        w = rand_mat(rng, 3, 4)

        def loss_fn():
            y, _ = layer.forward(x)
            return weighted_loss(y, w)

        y, cache = layer.forward(x)
        dx, dw, db = layer.backward(cache, w)
        err = finite_difference_check(
            loss_fn,
            [("x", x), ("w", layer.weights), ("b", layer.bias)],
            [("x", dx), ("w", dw), ("b", db)],
        )
        worst = max(worst, err)
    assert worst < 1e-6, f"dense gradient error {worst:.3e}"


# ---------------------------------------------------------------------------
# layer norm
# ---------------------------------------------------------------------------

def test_layernorm_constant_row_is_zeroed():
    layer = LayerNorm(8)
    h = Matrix.full(16, 8, 3.75)
    y, _ = layer.forward(h)
    assert all(v == 0.0 for v in y.data)


def test_layernorm_normalizes_rows():
    layer = LayerNorm(8, epsilon=1e-12)
    rng = RandSource(1)
    h = rand_mat(rng, 16, 8, std=2.0)
    y, _ = layer.forward(h)
    for i in range(16):
        row = y.row(i)
        mean = sum(row) / 8
        var = sum((v - mean) ** 2 for v in row) / 8
        assert abs(mean) < 1e-9
        assert abs(var - 1.0) < 1e-6


def test_layernorm_row_mean_invariant_default_epsilon():
    layer = LayerNorm(8)
    rng = RandSource(2)
    y, _ = layer.forward(rand_mat(rng, 32, 8))
    for i in range(32):
        assert abs(sum(y.row(i)) / 8) < 1e-9


def test_layernorm_gradients_match_finite_differences():
    worst = 0.0
    for seed in SEEDS:
        rng = RandSource(seed)
        layer = LayerNorm(8)
        rng.fill_normal(layer.gamma.data, 1.0, 0.2)
        rng.fill_normal(layer.beta.data, 0.0, 0.2)
        h = rand_mat(rng, 16, 8)
        w = rand_mat(rng, 16, 8)

        def loss_fn():
            y, _ = layer.forward(h)
            return weighted_loss(y, w)

        _, cache = layer.forward(h)
        dx, dgamma, dbeta = layer.backward(cache, w)
        err = finite_difference_check(
            loss_fn,
            [("h", h), ("gamma", layer.gamma), ("beta", layer.beta)],
            [("h", dx), ("gamma", dgamma), ("beta", dbeta)],
        )
        worst = max(worst, err)
    assert worst < 1e-6, f"layernorm gradient error {worst:.3e}"


# ---------------------------------------------------------------------------
# self-attention
# ---------------------------------------------------------------------------

def brute_force_single_head(h, wq, bq, wk, bk, wv, bv, wo, bo):
    """Textbook attention, written independently with numcore ops only."""
    from tsltnet.numcore import add_bias, rowwise_softmax, transpose

    q = add_bias(matmul(h, transpose(wq)), bq)
    k_ = add_bias(matmul(h, transpose(wk)), bk)
    v = add_bias(matmul(h, transpose(wv)), bv)
    scores = matmul(q, transpose(k_))
    scale = 1.0 / math.sqrt(wq.rows)
    scaled = Matrix(scores.rows, scores.cols, [s * scale for s in scores.data])
    attn = rowwise_softmax(scaled)
    ctx = matmul(attn, v)
    return add_bias(matmul(ctx, transpose(wo)), bo)


def test_attention_zero_weights_emit_output_bias():
    layer = SelfAttention()
    beta0 = [0.5, -1.0, 2.0, 0.0, 1.0, -0.5, 0.25, 3.0]
    layer.bo = Matrix.from_rows([beta0])
    rng = RandSource(3)
    y, _ = layer.forward(rand_mat(rng, 16, 8))
    for i in range(16):
        assert y.row(i) == pytest.approx(beta0, abs=1e-15)


def test_attention_identical_rows_give_uniform_weights():
    rng = RandSource(4)
    layer = SelfAttention.glorot(rng)
    v = rand_mat(rng, 1, 8)
    h = Matrix.from_rows([v.row(0)] * 16)
    y, cache = layer.forward(h)
    for w in cache["attn"]:
        assert w == pytest.approx(1 / 16, abs=1e-12)
    for i in range(1, 16):
        assert y.row(i) == y.row(0)  # identical inputs, bit-identical rows


def test_attention_matches_single_head_oracle():
    rng = RandSource(5)
    layer = SelfAttention.glorot(rng, heads=1, key_dim=8, model_dim=8)
    for t in (layer.bq, layer.bk, layer.bv, layer.bo):
        rng.fill_normal(t.data, 0.0, 0.2)
    h = rand_mat(rng, 16, 8)
    y, _ = layer.forward(h)
    want = brute_force_single_head(h, layer.wq, layer.bq, layer.wk, layer.bk,
                                   layer.wv, layer.bv, layer.wo, layer.bo)
    for i in range(len(y.data)):
        assert y.data[i] == pytest.approx(want.data[i], rel=1e-12, abs=1e-12)


def test_attention_gradients_match_finite_differences():
    worst = 0.0
    for seed in SEEDS:
        rng = RandSource(seed)
        layer = SelfAttention.glorot(rng)
        for t in (layer.bq, layer.bk, layer.bv, layer.bo):
            rng.fill_normal(t.data, 0.0, 0.2)
        h = rand_mat(rng, 16, 8)
        w = rand_mat(rng, 16, 8)

        def loss_fn():
            y, _ = layer.forward(h)
            return weighted_loss(y, w)

        _, cache = layer.forward(h)
        dh, grads = layer.backward(cache, w)
        tensors = [("h", h)] + [(n, getattr(layer, n))
                                for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]
        analytic = [("h", dh)] + [(n, grads[n])
                                  for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]
        worst = max(worst, finite_difference_check(loss_fn, tensors, analytic))
    assert worst < 1e-4, f"attention gradient error {worst:.3e}"


def test_attention_permutation_equivariance():
    rng = RandSource(6)
    layer = SelfAttention.glorot(rng)
    h = rand_mat(rng, 16, 8)
    y, _ = layer.forward(h)
    perm = list(range(16))
    RandSource(7).shuffle(perm)
    h_perm = Matrix.from_rows([h.row(i) for i in perm])
    y_perm, _ = layer.forward(h_perm)
    for out_row, src in enumerate(perm):
        assert y_perm.row(out_row) == pytest.approx(y.row(src), rel=1e-9, abs=1e-12)


def test_attention_then_pool_is_permutation_invariant():
    rng = RandSource(8)
    layer = SelfAttention.glorot(rng)
    h = rand_mat(rng, 16, 8)
    pooled = global_average_pool(layer.forward(h)[0]).row(0)
    perm = list(range(16))
    RandSource(9).shuffle(perm)
    h_perm = Matrix.from_rows([h.row(i) for i in perm])
    pooled_perm = global_average_pool(layer.forward(h_perm)[0]).row(0)
    assert pooled_perm == pytest.approx(pooled, rel=1e-9, abs=1e-12)


# ---------------------------------------------------------------------------
# global average pooling
# ---------------------------------------------------------------------------

def test_gap_identical_rows():
    v = [1.0, -2.0, 3.0, 4.0, 0.5, 6.0, -7.0, 8.0]
    h = Matrix.from_rows([v] * 16)
    assert global_average_pool(h).row(0) == pytest.approx(v, abs=1e-15)


def test_gap_backward_distributes_equally():
    g = Matrix.from_rows([[16.0, -8.0, 4.0, 2.0, 1.0, 0.5, 0.25, 0.0]])
    dh = global_average_pool_backward(g, 16)
    for i in range(16):
        assert dh.row(i) == [1.0, -0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0]


def test_gap_matches_mean_over_rows():
    rng = RandSource(10)
    h = rand_mat(rng, 16, 8)
    assert global_average_pool(h).data == mean_over_rows(h).data


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------

def test_dropout_rate_zero_is_identity():
    rng = RandSource(11)
    x = rand_mat(rng, 4, 4)
    y, mask = Dropout(0.0).forward(x, RandSource(0), train=True)
    assert y.data == x.data
    assert all(v == 1.0 for v in mask.data)


def test_dropout_inference_is_exact_identity():
    rng = RandSource(12)
    x = rand_mat(rng, 4, 4)
    source = RandSource(13)
    state_before = source._state
    y, mask = Dropout(0.3).forward(x, source, train=False)
    assert y is x  # bit-equal and no copy
    assert mask is None
    assert source._state == state_before  # no randomness consumed


def test_dropout_survivor_statistics():
    n = 1_000_000
    x = Matrix.full(1000, 1000, 2.0)
    y, mask = Dropout(0.3).forward(x, RandSource(14), train=True)
    survivors = sum(1 for v in mask.data if v != 0.0)
    assert abs(survivors / n - 0.7) <= 0.01
    scale = 1.0 / 0.7
    for i in range(0, n, 997):  # sampled: exact inverted-dropout values
        assert y.data[i] in (0.0, 2.0 * scale)
    assert set(mask.data) == {0.0, scale}


def test_dropout_backward_applies_mask():
    rng = RandSource(15)
    x = rand_mat(rng, 8, 8)
    drop = Dropout(0.5)
    y, mask = drop.forward(x, RandSource(16), train=True)
    g = rand_mat(rng, 8, 8)
    dx = drop.backward(mask, g)
    for i in range(64):
        assert dx.data[i] == g.data[i] * mask.data[i]
    assert drop.backward(None, g) is g


def test_dropout_rejects_bad_rate():
    with pytest.raises(ValueError):
        Dropout(1.0)
    with pytest.raises(ValueError):
        Dropout(-0.1)


# ---------------------------------------------------------------------------
# batch norm
# ---------------------------------------------------------------------------

def test_batchnorm_train_centers_columns():
    layer = BatchNorm(6)
    rng = RandSource(17)
    x = rand_mat(rng, 32, 6, std=3.0)
    y, _ = layer.forward(x, train=True)
    for j in range(6):
        col_mean = sum(y[i, j] for i in range(32)) / 32
        assert abs(col_mean) < 1e-9


def test_batchnorm_infer_identity_with_unit_stats():
    layer = BatchNorm(4)
    rng = RandSource(18)
    x = rand_mat(rng, 8, 4)
    y, cache = layer.forward(x, train=False)
    assert cache is None
    for i in range(len(x.data)):
        # y = x / sqrt(1 + eps): identity up to the epsilon factor
        assert y.data[i] == pytest.approx(x.data[i], rel=1e-3, abs=1e-9)


def test_batchnorm_rejects_tiny_train_batch():
    layer = BatchNorm(4)
    with pytest.raises(ValueError, match=">= 2"):
        layer.forward(Matrix.zeros(1, 4), train=True)


def test_batchnorm_updates_running_stats():
    layer = BatchNorm(2, momentum=0.9)
    x = Matrix.from_rows([[0.0, 10.0], [2.0, 14.0]])
    layer.forward(x, train=True)
    # batch means (1, 12), population vars (1, 4)
    assert layer.running_mean.row(0) == pytest.approx([0.1, 1.2], abs=1e-12)
    assert layer.running_var.row(0) == pytest.approx([0.9 + 0.1 * 1.0, 0.9 + 0.1 * 4.0],
                                                     abs=1e-12)


def test_batchnorm_gradients_match_finite_differences():
    worst = 0.0
    for seed in SEEDS:
        rng = RandSource(seed)
        layer = BatchNorm(5)
        rng.fill_normal(layer.gamma.data, 1.0, 0.2)
        rng.fill_normal(layer.beta.data, 0.0, 0.2)
        x = rand_mat(rng, 7, 5)
        w = rand_mat(rng, 7, 5)

        def loss_fn():
            y, _ = layer.forward(x, train=True)
            return weighted_loss(y, w)

        _, cache = layer.forward(x, train=True)
        dx, dgamma, dbeta = layer.backward(cache, w)
        err = finite_difference_check(
            loss_fn,
            [("x", x), ("gamma", layer.gamma), ("beta", layer.beta)],
            [("x", dx), ("gamma", dgamma), ("beta", dbeta)],
        )
        worst = max(worst, err)
    assert worst < 1e-5, f"batchnorm gradient error {worst:.3e}"


# ---------------------------------------------------------------------------
# softmax cross-entropy
# ---------------------------------------------------------------------------

def test_loss_perfect_prediction_is_tiny():
    logits = Matrix.from_rows([[40.0, 0.0, 0.0], [0.0, 40.0, 0.0]])
    onehot = Matrix.from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    loss, _ = softmax_cross_entropy(logits, onehot)
    assert loss <= 1e-9


@pytest.mark.parametrize("k", [2, 5, 10])
def test_loss_uniform_logits_is_log_k(k):
    logits = Matrix.zeros(4, k)
    onehot = Matrix.zeros(4, k)
    for i in range(4):
        onehot[i, i % k] = 1.0
    loss, _ = softmax_cross_entropy(logits, onehot)
    assert loss == pytest.approx(math.log(k), abs=1e-9)


def test_loss_rejects_malformed_targets():
    logits = Matrix.zeros(2, 3)
    bad = Matrix.from_rows([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(ValueError, match="row 0"):
        softmax_cross_entropy(logits, bad)
    bad2 = Matrix.from_rows([[0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(ValueError, match="one-hot"):
        softmax_cross_entropy(logits, bad2)


def test_loss_fused_gradient_matches_finite_differences():
    worst = 0.0
    for seed in SEEDS:
        rng = RandSource(seed)
        # unit-scale logits keep softmax away from saturation, so every
        # gradient coordinate stays well above finite-difference noise
        logits = rand_mat(rng, 6, 5, std=1.0)
        onehot = Matrix.zeros(6, 5)
        for i in range(6):
            onehot[i, rng.randint_below(5)] = 1.0

        def loss_fn():
            return softmax_cross_entropy(logits, onehot)[0]

        _, grad = softmax_cross_entropy(logits, onehot)
        err = finite_difference_check(loss_fn, [("logits", logits)],
                                      [("logits", grad)])
        worst = max(worst, err)
    assert worst < 1e-6, f"loss gradient error {worst:.3e}"


# ---------------------------------------------------------------------------
# the checker itself
# ---------------------------------------------------------------------------

def test_checker_exact_on_linear_function():
    rng = RandSource(19)
    theta = rand_mat(rng, 3, 3)
    slope = rand_mat(rng, 3, 3)
    for i in range(9):  # keep slopes well away from zero
        slope.data[i] = 0.5 + abs(slope.data[i])

    def loss_fn():
        return sum(s * t for s, t in zip(slope.data, theta.data))

    err = finite_difference_check(loss_fn, [("theta", theta)], [("theta", slope)])
    assert err < 1e-10


def test_checker_detects_corrupted_gradient():
    rng = RandSource(20)
    layer = Dense.glorot(4, 3, rng)
    x = rand_mat(rng, 2, 4)
    w = rand_mat(rng, 2, 3)

    def loss_fn():
        return weighted_loss(layer.forward(x)[0], w)

    _, cache = layer.forward(x)
    _, dw, db = layer.backward(cache, w)
    for i in range(len(db.data)):
        db.data[i] *= 1.10  # +10% corruption
    err = finite_difference_check(loss_fn, [("b", layer.bias)], [("b", db)])
    assert err > 1e-2
