# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel backend.

Statement-for-statement mirror of ``_pykernels``; every loop accumulates in
the same order over IEEE-754 doubles (and the build disables FP contraction),
so outputs are bit-identical to the pure-Python fallback. See _pykernels.py
for the per-kernel contracts.
"""

from libc.math cimport cos, exp, isfinite, log, sqrt

COMPILED = True

cdef double _INV_2POW53 = 1.0 / 9007199254740992.0
cdef double _TWO_PI = 6.283185307179586
cdef unsigned long long _GAMMA = 0x9E3779B97F4A7C15ULL
cdef unsigned long long _MIX1 = 0xBF58476D1CE4E5B9ULL
cdef unsigned long long _MIX2 = 0x94D049BB133111EBULL


def bmm(double[::1] a, double[::1] b, double[::1] out,
        Py_ssize_t batch, Py_ssize_t m, Py_ssize_t k, Py_ssize_t n,
        bint ta, bint tb):
    cdef Py_ssize_t bi, i, j, kk, ao, bo, oo, abase, bbase, astride, bstride
    cdef double acc
    astride = m if ta else 1
    bstride = 1 if tb else n
    for bi in range(batch):
        ao = bi * m * k
        bo = bi * k * n
        oo = bi * m * n
        for i in range(m):
            for j in range(n):
                abase = ao + (i if ta else i * k)
                bbase = bo + (j * k if tb else j)
                acc = 0.0
                for kk in range(k):
                    acc += a[abase + kk * astride] * b[bbase + kk * bstride]
                out[oo + i * n + j] = acc


def add_row_vec(double[::1] x, double[::1] v, double[::1] out,
                Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j, base
    for i in range(n):
        base = i * m
        for j in range(m):
            out[base + j] = x[base + j] + v[j]


def colsum(double[::1] x, double[::1] out, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j, base
    for j in range(m):
        out[j] = 0.0
    for i in range(n):
        base = i * m
        for j in range(m):
            out[j] += x[base + j]


def add(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] + b[i]


def sub(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] - b[i]


def mul(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] * b[i]


def affine(double[::1] x, double alpha, double beta, double[::1] out,
           Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = alpha * x[i] + beta


def relu_fwd(double[::1] x, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double v
    for i in range(n):
        v = x[i]
        out[i] = v if v > 0.0 else 0.0


def relu_bwd(double[::1] z, double[::1] g, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = g[i] if z[i] > 0.0 else 0.0


def rowwise_softmax(double[::1] x, double[::1] out, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j, base
    cdef double hi, v, e, total
    for i in range(n):
        base = i * m
        hi = x[base]
        for j in range(1, m):
            v = x[base + j]
            if v > hi:
                hi = v
        total = 0.0
        for j in range(m):
            e = exp(x[base + j] - hi)
            out[base + j] = e
            total += e
        for j in range(m):
            out[base + j] = out[base + j] / total


def softmax_bwd_rows(double[::1] p, double[::1] dp, double[::1] out,
                     Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j, base
    cdef double dot
    for i in range(n):
        base = i * m
        dot = 0.0
        for j in range(m):
            dot += p[base + j] * dp[base + j]
        for j in range(m):
            out[base + j] = p[base + j] * (dp[base + j] - dot)


def softmax_xent(double[::1] probs, double[::1] onehot, double[::1] grad,
                 Py_ssize_t n, Py_ssize_t k):
    cdef Py_ssize_t i, j, base, ones
    cdef double inv_n, loss_sum, true_p, y
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
        loss_sum += -log(true_p + 1e-12)
    return loss_sum * inv_n, -1


def layernorm_fwd(double[::1] x, double[::1] gamma, double[::1] beta,
                  double eps, double[::1] out, double[::1] xhat,
                  double[::1] inv_std, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j, base
    cdef double inv_m, mean, var, d, istd, xh
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
        istd = 1.0 / sqrt(var + eps)
        inv_std[i] = istd
        for j in range(m):
            xh = (x[base + j] - mean) * istd
            xhat[base + j] = xh
            out[base + j] = gamma[j] * xh + beta[j]


def layernorm_bwd(double[::1] xhat, double[::1] inv_std, double[::1] gamma,
                  double[::1] g, double[::1] dx, double[::1] dgamma,
                  double[::1] dbeta, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j, base
    cdef double inv_m, s1, s2, dxh, istd
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


def batchnorm_fwd_train(double[::1] x, double[::1] gamma, double[::1] beta,
                        double eps, double[::1] out, double[::1] xhat,
                        double[::1] mean, double[::1] var, double[::1] inv_std,
                        Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j
    cdef double inv_n, mu, v, d, istd, xh
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
        istd = 1.0 / sqrt(v + eps)
        inv_std[j] = istd
        for i in range(n):
            xh = (x[i * m + j] - mu) * istd
            xhat[i * m + j] = xh
            out[i * m + j] = gamma[j] * xh + beta[j]


def batchnorm_fwd_infer(double[::1] x, double[::1] gamma, double[::1] beta,
                        double[::1] rmean, double[::1] rvar, double eps,
                        double[::1] out, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j
    cdef double istd
    for j in range(m):
        istd = 1.0 / sqrt(rvar[j] + eps)
        for i in range(n):
            out[i * m + j] = gamma[j] * ((x[i * m + j] - rmean[j]) * istd) + beta[j]


def batchnorm_bwd(double[::1] xhat, double[::1] inv_std, double[::1] gamma,
                  double[::1] g, double[::1] dx, double[::1] dgamma,
                  double[::1] dbeta, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j
    cdef double inv_n, s1, s2, dxh, istd, dg, db
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


def block_mean_rows(double[::1] x, double[::1] out,
                    Py_ssize_t batch, Py_ssize_t t, Py_ssize_t m):
    cdef Py_ssize_t bi, i, j
    cdef double inv_t, acc
    inv_t = 1.0 / t
    for bi in range(batch):
        for j in range(m):
            acc = 0.0
            for i in range(t):
                acc += x[(bi * t + i) * m + j]
            out[bi * m + j] = acc * inv_t


def block_spread_rows(double[::1] g, double[::1] out,
                      Py_ssize_t batch, Py_ssize_t t, Py_ssize_t m,
                      double alpha):
    cdef Py_ssize_t bi, i, j, base
    for bi in range(batch):
        for i in range(t):
            base = (bi * t + i) * m
            for j in range(m):
                out[base + j] = alpha * g[bi * m + j]


def split_heads(double[::1] x, double[::1] out,
                Py_ssize_t batch, Py_ssize_t t, Py_ssize_t heads, Py_ssize_t hd):
    cdef Py_ssize_t bi, h, i, d, src, dst
    for bi in range(batch):
        for h in range(heads):
            for i in range(t):
                src = (bi * t + i) * heads * hd + h * hd
                dst = ((bi * heads + h) * t + i) * hd
                for d in range(hd):
                    out[dst + d] = x[src + d]


def merge_heads(double[::1] x, double[::1] out,
                Py_ssize_t batch, Py_ssize_t t, Py_ssize_t heads, Py_ssize_t hd):
    cdef Py_ssize_t bi, h, i, d, src, dst
    for bi in range(batch):
        for h in range(heads):
            for i in range(t):
                src = ((bi * heads + h) * t + i) * hd
                dst = (bi * t + i) * heads * hd + h * hd
                for d in range(hd):
                    out[dst + d] = x[src + d]


def gather_rows(double[::1] src, Py_ssize_t m, long long[::1] idx,
                double[::1] out):
    cdef Py_ssize_t r, j, s, d
    for r in range(idx.shape[0]):
        s = idx[r] * m
        d = r * m
        for j in range(m):
            out[d + j] = src[s + j]


def adam_step(double[::1] p, double[::1] g, double[::1] m1, double[::1] m2,
              Py_ssize_t n, double lr, double b1, double b2, double eps,
              double bc1, double bc2):
    cdef Py_ssize_t i
    cdef double gi, mhat, vhat
    for i in range(n):
        gi = g[i]
        m1[i] = b1 * m1[i] + (1.0 - b1) * gi
        m2[i] = b2 * m2[i] + (1.0 - b2) * (gi * gi)
        mhat = m1[i] / bc1
        vhat = m2[i] / bc2
        p[i] = p[i] - lr * mhat / (sqrt(vhat) + eps)


def has_nonfinite(double[::1] x, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        if not isfinite(x[i]):
            return 1
    return 0


cdef inline unsigned long long _mix(unsigned long long z) nogil:
    z ^= z >> 30
    z = z * _MIX1
    z ^= z >> 27
    z = z * _MIX2
    return z ^ (z >> 31)


def fill_uniform(double[::1] out, Py_ssize_t n, unsigned long long state):
    cdef Py_ssize_t i
    for i in range(n):
        state = state + _GAMMA
        out[i] = (_mix(state) >> 11) * _INV_2POW53
    return state


def fill_normal(double[::1] out, Py_ssize_t n, unsigned long long state,
                double mean, double std):
    cdef Py_ssize_t i
    cdef double u1, u2, r
    for i in range(n):
        state = state + _GAMMA
        u1 = (_mix(state) >> 11) * _INV_2POW53
        state = state + _GAMMA
        u2 = (_mix(state) >> 11) * _INV_2POW53
        r = sqrt(-2.0 * log(1.0 - u1))
        out[i] = mean + std * (r * cos(_TWO_PI * u2))
    return state


def dropout_fwd(double[::1] x, double[::1] out, double[::1] mask,
                Py_ssize_t n, double rate, unsigned long long state):
    cdef Py_ssize_t i
    cdef double scale, u
    scale = 1.0 / (1.0 - rate)
    for i in range(n):
        state = state + _GAMMA
        u = (_mix(state) >> 11) * _INV_2POW53
        if u < rate:
            mask[i] = 0.0
            out[i] = 0.0
        else:
            mask[i] = scale
            out[i] = x[i] * scale
    return state
