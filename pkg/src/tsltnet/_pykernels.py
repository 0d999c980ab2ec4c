"""Pure-Python kernel backend.

Reference implementation of every hot numeric kernel. The compiled twin in
``_ckernels.pyx`` mirrors each function statement for statement; both
accumulate in the same order over IEEE-754 doubles, so their outputs are
bit-identical and either backend can be swapped in freely (the compiled one
is just 50-200x faster).

All kernels operate on flat row-major ``array('d')`` buffers with explicit
dimensions, write into caller-allocated outputs, and never allocate.
"""

import math

__all__ = [
    "COMPILED",
    "bmm",
    "add_row_vec",
    "colsum",
    "add",
    "sub",
    "mul",
    "affine",
    "relu_fwd",
    "relu_bwd",
    "rowwise_softmax",
    "softmax_bwd_rows",
    "softmax_xent",
    "layernorm_fwd",
    "layernorm_bwd",
    "batchnorm_fwd_train",
    "batchnorm_fwd_infer",
    "batchnorm_bwd",
    "block_mean_rows",
    "block_spread_rows",
    "split_heads",
    "merge_heads",
    "gather_rows",
    "adam_step",
    "has_nonfinite",
    "fill_uniform",
    "fill_normal",
    "dropout_fwd",
]

COMPILED = False

_M64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2POW53 = 1.0 / 9007199254740992.0
_TWO_PI = 6.283185307179586


# ---------------------------------------------------------------------------
# dense linear algebra
# ---------------------------------------------------------------------------

def bmm(a, b, out, batch, m, k, n, ta, tb):
    """Batched matrix multiply over contiguous blocks.

    Per block: OUT (m x n) = A' (m x k) @ B' (k x n), where A' is the stored
    block if ``ta`` is false, else the transpose of a stored (k x m) block;
    likewise ``tb`` for a stored (n x k) block. ``batch=1`` is a plain
    matmul. Accumulation is always in increasing-k order.
    """
    for bi in range(batch):
        ao = bi * m * k
        bo = bi * k * n
        oo = bi * m * n
        for i in range(m):
            for j in range(n):
                acc = 0.0
                for kk in range(k):
                    av = a[ao + kk * m + i] if ta else a[ao + i * k + kk]
                    bv = b[bo + j * k + kk] if tb else b[bo + kk * n + j]
                    acc += av * bv
                out[oo + i * n + j] = acc


def add_row_vec(x, v, out, n, m):
    """out[i, j] = x[i, j] + v[j] (bias broadcast)."""
    for i in range(n):
        base = i * m
        for j in range(m):
            out[base + j] = x[base + j] + v[j]


def colsum(x, out, n, m):
    """out[j] = sum over rows of x[:, j], accumulated in row order."""
    for j in range(m):
        out[j] = 0.0
    for i in range(n):
        base = i * m
        for j in range(m):
            out[j] += x[base + j]


def add(a, b, out, n):
    for i in range(n):
        out[i] = a[i] + b[i]


def sub(a, b, out, n):
    for i in range(n):
        out[i] = a[i] - b[i]


def mul(a, b, out, n):
    for i in range(n):
        out[i] = a[i] * b[i]


def affine(x, alpha, beta, out, n):
    """out = alpha * x + beta, elementwise."""
    for i in range(n):
        out[i] = alpha * x[i] + beta


# ---------------------------------------------------------------------------
# activations and row reductions
# ---------------------------------------------------------------------------

def relu_fwd(x, out, n):
    for i in range(n):
        v = x[i]
        out[i] = v if v > 0.0 else 0.0


def relu_bwd(z, g, out, n):
    """out = g where the pre-activation z is > 0, else 0 (subgradient 0 at 0)."""
    for i in range(n):
        out[i] = g[i] if z[i] > 0.0 else 0.0


def rowwise_softmax(x, out, n, m):
    """Row-wise softmax with max subtraction for overflow safety."""
    for i in range(n):
        base = i * m
        hi = x[base]
        for j in range(1, m):
            v = x[base + j]
            if v > hi:
                hi = v
        total = 0.0
        for j in range(m):
            e = math.exp(x[base + j] - hi)
            out[base + j] = e
            total += e
        for j in range(m):
            out[base + j] = out[base + j] / total


def softmax_bwd_rows(p, dp, out, n, m):
    """Jacobian-vector product of row softmax: out = p * (dp - <p, dp>)."""
    for i in range(n):
        base = i * m
        dot = 0.0
        for j in range(m):
            dot += p[base + j] * dp[base + j]
        for j in range(m):
            out[base + j] = p[base + j] * (dp[base + j] - dot)


def softmax_xent(probs, onehot, grad, n, k):
    """Mean cross-entropy of softmax outputs against one-hot targets.

    grad receives the fused gradient (probs - onehot) / n. Returns
    ``(loss, bad_row)`` where bad_row is the index of the first row whose
    target is not exactly one-hot (entries 0/1, exactly one 1), or -1.
    """
    inv_n = 1.0 / n
    loss_sum = 0.0
    for i in range(n):
        base = i * k
        ones = 0
        true_p = 0.0
        for j in range(k):
            y = onehot[base + j]
            if y == 1.0:
                ones += 1
                true_p = probs[base + j]
            elif y != 0.0:
                return 0.0, i
            grad[base + j] = (probs[base + j] - y) * inv_n
        if ones != 1:
            return 0.0, i
        loss_sum += -math.log(true_p + 1e-12)
    return loss_sum * inv_n, -1


# ---------------------------------------------------------------------------
# normalization layers
# ---------------------------------------------------------------------------

def layernorm_fwd(x, gamma, beta, eps, out, xhat, inv_std, n, m):
    """Per-row normalization over m features: out = gamma * xhat + beta.

    xhat (n x m) and inv_std (n) are saved for the backward pass.
    """
    inv_m = 1.0 / m
    for i in range(n):
        base = i * m
        mean = 0.0
        for j in range(m):
            mean += x[base + j]
        mean *= inv_m
        var = 0.0
        for j in range(m):
            d = x[base + j] - mean
            var += d * d
        var *= inv_m
        istd = 1.0 / math.sqrt(var + eps)
        inv_std[i] = istd
        for j in range(m):
            xh = (x[base + j] - mean) * istd
            xhat[base + j] = xh
            out[base + j] = gamma[j] * xh + beta[j]


def layernorm_bwd(xhat, inv_std, gamma, g, dx, dgamma, dbeta, n, m):
    """Backward of layernorm_fwd; dgamma/dbeta are overwritten with sums."""
    inv_m = 1.0 / m
    for j in range(m):
        dgamma[j] = 0.0
        dbeta[j] = 0.0
    for i in range(n):
        base = i * m
        s1 = 0.0
        s2 = 0.0
        for j in range(m):
            dxh = g[base + j] * gamma[j]
            s1 += dxh
            s2 += dxh * xhat[base + j]
        istd = inv_std[i]
        for j in range(m):
            dxh = g[base + j] * gamma[j]
            dx[base + j] = istd * (dxh - s1 * inv_m - xhat[base + j] * (s2 * inv_m))
        for j in range(m):
            dgamma[j] += g[base + j] * xhat[base + j]
            dbeta[j] += g[base + j]


def batchnorm_fwd_train(x, gamma, beta, eps, out, xhat, mean, var, inv_std, n, m):
    """Per-column batch normalization using batch statistics (population var).

    mean/var/inv_std (length m) and xhat are saved for the backward pass and
    for the caller's running-statistics update.
    """
    inv_n = 1.0 / n
    for j in range(m):
        mu = 0.0
        for i in range(n):
            mu += x[i * m + j]
        mu *= inv_n
        v = 0.0
        for i in range(n):
            d = x[i * m + j] - mu
            v += d * d
        v *= inv_n
        mean[j] = mu
        var[j] = v
        istd = 1.0 / math.sqrt(v + eps)
        inv_std[j] = istd
        for i in range(n):
            xh = (x[i * m + j] - mu) * istd
            xhat[i * m + j] = xh
            out[i * m + j] = gamma[j] * xh + beta[j]


def batchnorm_fwd_infer(x, gamma, beta, rmean, rvar, eps, out, n, m):
    """Normalize by stored running statistics (inference path)."""
    for j in range(m):
        istd = 1.0 / math.sqrt(rvar[j] + eps)
        for i in range(n):
            out[i * m + j] = gamma[j] * ((x[i * m + j] - rmean[j]) * istd) + beta[j]


def batchnorm_bwd(xhat, inv_std, gamma, g, dx, dgamma, dbeta, n, m):
    """Backward of batchnorm_fwd_train; dgamma/dbeta overwritten with sums."""
    inv_n = 1.0 / n
    for j in range(m):
        s1 = 0.0
        s2 = 0.0
        for i in range(n):
            dxh = g[i * m + j] * gamma[j]
            s1 += dxh
            s2 += dxh * xhat[i * m + j]
        istd = inv_std[j]
        for i in range(n):
            dxh = g[i * m + j] * gamma[j]
            dx[i * m + j] = istd * (dxh - s1 * inv_n - xhat[i * m + j] * (s2 * inv_n))
        dg = 0.0
        db = 0.0
        for i in range(n):
            dg += g[i * m + j] * xhat[i * m + j]
            db += g[i * m + j]
        dgamma[j] = dg
        dbeta[j] = db


# ---------------------------------------------------------------------------
# sequence bookkeeping (pooling, head split/merge, row gather)
# ---------------------------------------------------------------------------

def block_mean_rows(x, out, batch, t, m):
    """out[b, :] = mean over the t rows of block b; x is (batch*t) x m."""
    inv_t = 1.0 / t
    for bi in range(batch):
        for j in range(m):
            acc = 0.0
            for i in range(t):
                acc += x[(bi * t + i) * m + j]
            out[bi * m + j] = acc * inv_t


def block_spread_rows(g, out, batch, t, m, alpha):
    """out[b*t + i, :] = alpha * g[b, :] for every row i (pooling backward)."""
    for bi in range(batch):
        for i in range(t):
            base = (bi * t + i) * m
            for j in range(m):
                out[base + j] = alpha * g[bi * m + j]


def split_heads(x, out, batch, t, heads, hd):
    """(batch*t) x (heads*hd) -> per-(batch, head) contiguous t x hd blocks."""
    for bi in range(batch):
        for h in range(heads):
            for i in range(t):
                src = (bi * t + i) * heads * hd + h * hd
                dst = ((bi * heads + h) * t + i) * hd
                for d in range(hd):
                    out[dst + d] = x[src + d]


def merge_heads(x, out, batch, t, heads, hd):
    """Inverse of split_heads."""
    for bi in range(batch):
        for h in range(heads):
            for i in range(t):
                src = ((bi * heads + h) * t + i) * hd
                dst = (bi * t + i) * heads * hd + h * hd
                for d in range(hd):
                    out[dst + d] = x[src + d]


def gather_rows(src, m, idx, out):
    """Copy rows src[idx[r], :] into out[r, :]; idx is an array('q')."""
    for r in range(len(idx)):
        s = idx[r] * m
        d = r * m
        for j in range(m):
            out[d + j] = src[s + j]


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_step(p, g, m1, m2, n, lr, b1, b2, eps, bc1, bc2):
    """In-place Adam update with precomputed bias corrections bc = 1 - beta^t."""
    for i in range(n):
        gi = g[i]
        m1[i] = b1 * m1[i] + (1.0 - b1) * gi
        m2[i] = b2 * m2[i] + (1.0 - b2) * (gi * gi)
        mhat = m1[i] / bc1
        vhat = m2[i] / bc2
        p[i] = p[i] - lr * mhat / (math.sqrt(vhat) + eps)


def has_nonfinite(x, n):
    """1 if any entry is NaN or infinite, else 0."""
    for i in range(n):
        if not math.isfinite(x[i]):
            return 1
    return 0


# ---------------------------------------------------------------------------
# deterministic random streams (splitmix64 counter generator)
# ---------------------------------------------------------------------------

def _mix(z):
    z ^= z >> 30
    z = (z * _MIX1) & _M64
    z ^= z >> 27
    z = (z * _MIX2) & _M64
    return z ^ (z >> 31)


def fill_uniform(out, n, state):
    """Fill with doubles in [0, 1); returns the advanced counter state."""
    for i in range(n):
        state = (state + _GAMMA) & _M64
        out[i] = (_mix(state) >> 11) * _INV_2POW53
    return state


def fill_normal(out, n, state, mean, std):
    """Box-Muller normals; each draw consumes exactly two uniforms."""
    for i in range(n):
        state = (state + _GAMMA) & _M64
        u1 = (_mix(state) >> 11) * _INV_2POW53
        state = (state + _GAMMA) & _M64
        u2 = (_mix(state) >> 11) * _INV_2POW53
        r = math.sqrt(-2.0 * math.log(1.0 - u1))
        out[i] = mean + std * (r * math.cos(_TWO_PI * u2))
    return state


def dropout_fwd(x, out, mask, n, rate, state):
    """Inverted dropout: zero with probability ``rate``, survivors scaled.

    mask holds the applied multiplier (0 or 1/(1-rate)) so the backward pass
    is a plain elementwise product. Consumes one uniform per entry; returns
    the advanced counter state.
    """
    scale = 1.0 / (1.0 - rate)
    for i in range(n):
        state = (state + _GAMMA) & _M64
        u = (_mix(state) >> 11) * _INV_2POW53
        if u < rate:
            mask[i] = 0.0
            out[i] = 0.0
        else:
            mask[i] = scale
            out[i] = x[i] * scale
    return state
