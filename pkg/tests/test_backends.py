"""Bit-exact equivalence of the compiled kernels against the pure-Python
reference. Every kernel must produce byte-identical buffers and identical
RNG states on both backends; this is what makes the backend choice
invisible to everything above it."""

import random
from array import array

import pytest

from tsltnet import _pykernels as pk

ck = pytest.importorskip("tsltnet._ckernels",
                         reason="compiled kernel extension not built")


def buf(values):
    return array("d", values)


def rand_buf(n, lo=-3.0, hi=3.0):
    return buf(random.uniform(lo, hi) for _ in range(n))


def zeros(n):
    return array("d", bytes(8 * n))


def assert_same(a, b, what):
    assert a.tobytes() == b.tobytes(), f"{what}: backends disagree"


@pytest.mark.parametrize("ta", [False, True])
@pytest.mark.parametrize("tb", [False, True])
@pytest.mark.parametrize("dims", [(1, 3, 4, 5), (4, 16, 4, 16), (2, 1, 7, 1)])
def test_bmm_all_layouts(ta, tb, dims):
    random.seed(hash((ta, tb, dims)) & 0xFFFF)
    batch, m, k, n = dims
    a = rand_buf(batch * m * k)
    b = rand_buf(batch * k * n)
    o1, o2 = zeros(batch * m * n), zeros(batch * m * n)
    pk.bmm(a, b, o1, batch, m, k, n, ta, tb)
    ck.bmm(a, b, o2, batch, m, k, n, ta, tb)
    assert_same(o1, o2, f"bmm ta={ta} tb={tb} {dims}")


def test_elementwise_and_rows():
    random.seed(7)
    n, m = 9, 13
    x = rand_buf(n * m)
    v = rand_buf(m)
    g = rand_buf(n * m)
    o1, o2 = zeros(n * m), zeros(n * m)
    pk.add_row_vec(x, v, o1, n, m)
    ck.add_row_vec(x, v, o2, n, m)
    assert_same(o1, o2, "add_row_vec")
    s1, s2 = zeros(m), zeros(m)
    pk.colsum(x, s1, n, m)
    ck.colsum(x, s2, n, m)
    assert_same(s1, s2, "colsum")
    for fn in ("add", "sub", "mul"):
        o1, o2 = zeros(n * m), zeros(n * m)
        getattr(pk, fn)(x, g, o1, n * m)
        getattr(ck, fn)(x, g, o2, n * m)
        assert_same(o1, o2, fn)
    o1, o2 = zeros(n * m), zeros(n * m)
    pk.affine(x, 1.7, -0.3, o1, n * m)
    ck.affine(x, 1.7, -0.3, o2, n * m)
    assert_same(o1, o2, "affine")


def test_activations_and_softmax():
    random.seed(8)
    n, m = 11, 9
    x = rand_buf(n * m, -700, 700)
    z = rand_buf(n * m)
    g = rand_buf(n * m)
    for fn, args in (("relu_fwd", (z,)), ("relu_bwd", (z, g))):
        o1, o2 = zeros(n * m), zeros(n * m)
        getattr(pk, fn)(*args, o1, n * m)
        getattr(ck, fn)(*args, o2, n * m)
        assert_same(o1, o2, fn)
    s1, s2 = zeros(n * m), zeros(n * m)
    pk.rowwise_softmax(x, s1, n, m)
    ck.rowwise_softmax(x, s2, n, m)
    assert_same(s1, s2, "rowwise_softmax")
    d1, d2 = zeros(n * m), zeros(n * m)
    pk.softmax_bwd_rows(s1, g, d1, n, m)
    ck.softmax_bwd_rows(s2, g, d2, n, m)
    assert_same(d1, d2, "softmax_bwd_rows")


def test_softmax_xent():
    random.seed(9)
    n, k = 12, 5
    logits = rand_buf(n * k)
    probs1, probs2 = zeros(n * k), zeros(n * k)
    pk.rowwise_softmax(logits, probs1, n, k)
    ck.rowwise_softmax(logits, probs2, n, k)
    onehot = zeros(n * k)
    for i in range(n):
        onehot[i * k + random.randrange(k)] = 1.0
    g1, g2 = zeros(n * k), zeros(n * k)
    l1, bad1 = pk.softmax_xent(probs1, onehot, g1, n, k)
    l2, bad2 = ck.softmax_xent(probs2, onehot, g2, n, k)
    assert (l1, bad1) == (l2, bad2)
    assert_same(g1, g2, "softmax_xent grad")


def test_normalization_kernels():
    random.seed(10)
    n, m = 10, 8
    x = rand_buf(n * m)
    gamma = rand_buf(m, 0.5, 1.5)
    beta = rand_buf(m)
    g = rand_buf(n * m)

    o1, xh1, is1 = zeros(n * m), zeros(n * m), zeros(n)
    o2, xh2, is2 = zeros(n * m), zeros(n * m), zeros(n)
    pk.layernorm_fwd(x, gamma, beta, 1e-3, o1, xh1, is1, n, m)
    ck.layernorm_fwd(x, gamma, beta, 1e-3, o2, xh2, is2, n, m)
    for a, b, what in ((o1, o2, "ln out"), (xh1, xh2, "ln xhat"), (is1, is2, "ln istd")):
        assert_same(a, b, what)
    dx1, dg1, db1 = zeros(n * m), zeros(m), zeros(m)
    dx2, dg2, db2 = zeros(n * m), zeros(m), zeros(m)
    pk.layernorm_bwd(xh1, is1, gamma, g, dx1, dg1, db1, n, m)
    ck.layernorm_bwd(xh2, is2, gamma, g, dx2, dg2, db2, n, m)
    for a, b, what in ((dx1, dx2, "ln dx"), (dg1, dg2, "ln dgamma"), (db1, db2, "ln dbeta")):
        assert_same(a, b, what)

    o1, xh1 = zeros(n * m), zeros(n * m)
    mu1, va1, is1 = zeros(m), zeros(m), zeros(m)
    o2, xh2 = zeros(n * m), zeros(n * m)
    mu2, va2, is2 = zeros(m), zeros(m), zeros(m)
    pk.batchnorm_fwd_train(x, gamma, beta, 1e-3, o1, xh1, mu1, va1, is1, n, m)
    ck.batchnorm_fwd_train(x, gamma, beta, 1e-3, o2, xh2, mu2, va2, is2, n, m)
    for a, b, what in ((o1, o2, "bn out"), (xh1, xh2, "bn xhat"),
                       (mu1, mu2, "bn mean"), (va1, va2, "bn var"),
                       (is1, is2, "bn istd")):
        assert_same(a, b, what)
    dx1, dg1, db1 = zeros(n * m), zeros(m), zeros(m)
    dx2, dg2, db2 = zeros(n * m), zeros(m), zeros(m)
    pk.batchnorm_bwd(xh1, is1, gamma, g, dx1, dg1, db1, n, m)
    ck.batchnorm_bwd(xh2, is2, gamma, g, dx2, dg2, db2, n, m)
    for a, b, what in ((dx1, dx2, "bn dx"), (dg1, dg2, "bn dgamma"), (db1, db2, "bn dbeta")):
        assert_same(a, b, what)
    i1, i2 = zeros(n * m), zeros(n * m)
    pk.batchnorm_fwd_infer(x, gamma, beta, mu1, va1, 1e-3, i1, n, m)
    ck.batchnorm_fwd_infer(x, gamma, beta, mu2, va2, 1e-3, i2, n, m)
    assert_same(i1, i2, "bn infer")


def test_sequence_bookkeeping():
    random.seed(11)
    batch, t, heads, hd = 3, 16, 2, 4
    m = heads * hd
    x = rand_buf(batch * t * m)
    s1, s2 = zeros(batch * heads * t * hd), zeros(batch * heads * t * hd)
    pk.split_heads(x, s1, batch, t, heads, hd)
    ck.split_heads(x, s2, batch, t, heads, hd)
    assert_same(s1, s2, "split_heads")
    m1, m2 = zeros(batch * t * m), zeros(batch * t * m)
    pk.merge_heads(s1, m1, batch, t, heads, hd)
    ck.merge_heads(s2, m2, batch, t, heads, hd)
    assert_same(m1, m2, "merge_heads")
    assert m1.tobytes() == x.tobytes(), "merge(split(x)) != x"

    o1, o2 = zeros(batch * m), zeros(batch * m)
    pk.block_mean_rows(x, o1, batch, t, m)
    ck.block_mean_rows(x, o2, batch, t, m)
    assert_same(o1, o2, "block_mean_rows")
    g1, g2 = zeros(batch * t * m), zeros(batch * t * m)
    pk.block_spread_rows(o1, g1, batch, t, m, 1.0 / t)
    ck.block_spread_rows(o2, g2, batch, t, m, 1.0 / t)
    assert_same(g1, g2, "block_spread_rows")

    idx = array("q", [5, 0, 2, 2])
    r1, r2 = zeros(4 * m), zeros(4 * m)
    pk.gather_rows(x, m, idx, r1)
    ck.gather_rows(x, m, idx, r2)
    assert_same(r1, r2, "gather_rows")


def test_adam_and_nonfinite():
    random.seed(12)
    n = 40
    g = rand_buf(n)
    p1, p2 = rand_buf(n), None
    p2 = array("d", p1)
    m1, v1, m2, v2 = zeros(n), zeros(n), zeros(n), zeros(n)
    for t in range(1, 4):
        bc1, bc2 = 1.0 - 0.9 ** t, 1.0 - 0.999 ** t
        pk.adam_step(p1, g, m1, v1, n, 1e-3, 0.9, 0.999, 1e-7, bc1, bc2)
        ck.adam_step(p2, g, m2, v2, n, 1e-3, 0.9, 0.999, 1e-7, bc1, bc2)
    for a, b, what in ((p1, p2, "adam p"), (m1, m2, "adam m"), (v1, v2, "adam v")):
        assert_same(a, b, what)

    bad = buf([1.0, float("nan"), 0.0])
    assert pk.has_nonfinite(bad, 3) == ck.has_nonfinite(bad, 3) == 1
    good = buf([1.0, -2.0, 0.0])
    assert pk.has_nonfinite(good, 3) == ck.has_nonfinite(good, 3) == 0


def test_random_streams_identical():
    for seed in (0, 1, 2**63 + 17, 2**64 - 1):
        u1, u2 = zeros(257), zeros(257)
        s1 = pk.fill_uniform(u1, 257, seed)
        s2 = ck.fill_uniform(u2, 257, seed)
        assert s1 == s2
        assert_same(u1, u2, f"fill_uniform seed={seed}")
        n1, n2 = zeros(101), zeros(101)
        s1 = pk.fill_normal(n1, 101, seed, 0.25, 1.5)
        s2 = ck.fill_normal(n2, 101, seed, 0.25, 1.5)
        assert s1 == s2
        assert_same(n1, n2, f"fill_normal seed={seed}")

    random.seed(13)
    x = rand_buf(500)
    y1, k1 = zeros(500), zeros(500)
    y2, k2 = zeros(500), zeros(500)
    s1 = pk.dropout_fwd(x, y1, k1, 500, 0.3, 99)
    s2 = ck.dropout_fwd(x, y2, k2, 500, 0.3, 99)
    assert s1 == s2
    assert_same(y1, y2, "dropout out")
    assert_same(k1, k2, "dropout mask")
