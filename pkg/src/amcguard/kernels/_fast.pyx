# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels (conv1d and LSTM, fwd + bwd).

Same contracts as numpy_backend; gate matmuls go through BLAS
(scipy.linalg.cython_blas) on compact per-step buffers and the pointwise
gate math is fused C loops, so the per-timestep Python overhead of the
fallback disappears.

Gate pre-activations are clamped to +-30 before exp/tanh; both saturate
within one float32 ulp well inside that range, and the clamp keeps the
math finite for arbitrarily large finite inputs.
"""

import numpy as np

cimport cython
from libc.math cimport exp, expf, fmax, fmaxf, fmin, fminf
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm, sgemm

NAME = "c"

ctypedef fused real:
    float
    double


cdef inline real _sig(real z) noexcept nogil:
    # branch-free clamp keeps exp finite under -ffast-math
    if real is float:
        z = fminf(fmaxf(z, <real>-30.0), <real>30.0)
        return <real>(1.0 / (1.0 + expf(-z)))
    else:
        z = fmin(fmax(z, <real>-30.0), <real>30.0)
        return <real>(1.0 / (1.0 + exp(-z)))


cdef inline real _tanh(real z) noexcept nogil:
    # via exp so the loop vectorizes through libmvec (no vector tanhf needed)
    cdef real e
    if real is float:
        z = fminf(fmaxf(z, <real>-15.0), <real>15.0)
        e = expf(<real>2.0 * z)
    else:
        z = fmin(fmax(z, <real>-15.0), <real>15.0)
        e = exp(<real>2.0 * z)
    return (e - <real>1.0) / (e + <real>1.0)


cdef inline void _gemm_rm(char trans_a, char trans_b, int m, int n, int k,
                          real alpha, real* a, int lda, real* b, int ldb,
                          real beta, real* c, int ldc) noexcept nogil:
    # row-major C[m,n] = alpha * op(A)[m,k] @ op(B)[k,n] + beta * C,
    # where lda/ldb/ldc are the row strides of the row-major buffers.
    # Implemented as the column-major product C^T = op(B)^T @ op(A)^T.
    if real is float:
        sgemm(&trans_b, &trans_a, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)
    else:
        dgemm(&trans_b, &trans_a, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


# ---------------------------------------------------------------------------
# conv1d


def conv1d_forward(real[:, :, ::1] x, real[:, :, ::1] k, real[::1] b):
    cdef int B = x.shape[0], T = x.shape[1], Cin = x.shape[2]
    cdef int K = k.shape[0], W = k.shape[1]
    cdef int pl = W // 2
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    # kernel transposed to [W, Cin, K] so the inner axpy runs over contiguous K
    kt_arr = np.ascontiguousarray(np.asarray(k).transpose(1, 2, 0))
    y_arr = np.empty((B, T, K), dtype=dtype)
    cdef real[:, :, ::1] kt = kt_arr
    cdef real[:, :, ::1] y = y_arr
    cdef int bb, t, kk, w, c, u, lo, hi
    cdef real xv
    with nogil:
        for bb in range(B):
            for t in range(T):
                for kk in range(K):
                    y[bb, t, kk] = b[kk]
                lo = pl - t if pl > t else 0
                hi = W if t + W - pl <= T else T + pl - t
                for w in range(lo, hi):
                    u = t + w - pl
                    for c in range(Cin):
                        xv = x[bb, u, c]
                        for kk in range(K):
                            y[bb, t, kk] += xv * kt[w, c, kk]
    return y_arr


def conv1d_backward(real[:, :, ::1] x, real[:, :, ::1] k, real[:, :, ::1] gy,
                    bint need_gx=True, bint need_gk=True):
    cdef int B = x.shape[0], T = x.shape[1], Cin = x.shape[2]
    cdef int K = k.shape[0], W = k.shape[1]
    cdef int pl = W // 2
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    kt_arr = np.ascontiguousarray(np.asarray(k).transpose(1, 2, 0))
    gkt_arr = np.zeros((W, Cin, K), dtype=dtype)
    gx_arr = np.zeros((B, T, Cin), dtype=dtype) if need_gx else None
    gb_arr = np.zeros(K, dtype=dtype)
    cdef real[:, :, ::1] kt = kt_arr
    cdef real[:, :, ::1] gkt = gkt_arr
    cdef real[:, :, ::1] gx = gx_arr if need_gx else x[:0]
    cdef real[::1] gb = gb_arr
    cdef int bb, t, kk, w, c, u, lo, hi
    cdef real acc, xv
    with nogil:
        for bb in range(B):
            for t in range(T):
                for kk in range(K):
                    gb[kk] += gy[bb, t, kk]
                lo = pl - t if pl > t else 0
                hi = W if t + W - pl <= T else T + pl - t
                for w in range(lo, hi):
                    u = t + w - pl
                    for c in range(Cin):
                        if need_gx:
                            acc = <real>0.0
                            for kk in range(K):
                                acc += kt[w, c, kk] * gy[bb, t, kk]
                            gx[bb, u, c] += acc
                        if need_gk:
                            xv = x[bb, u, c]
                            for kk in range(K):
                                gkt[w, c, kk] += xv * gy[bb, t, kk]
    gk_arr = np.ascontiguousarray(gkt_arr.transpose(2, 0, 1)) if need_gk else None
    return gx_arr, gk_arr, gb_arr


# ---------------------------------------------------------------------------
# LSTM


def lstm_forward(real[:, :, ::1] x, real[:, ::1] wx, real[:, ::1] wh, real[::1] b):
    cdef int B = x.shape[0], T = x.shape[1], F = x.shape[2]
    cdef int H = wh.shape[0], G = 4 * H
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    gates_arr = np.empty((B, T, G), dtype=dtype)
    c_arr = np.empty((B, T, H), dtype=dtype)
    h_arr = np.empty((B, T, H), dtype=dtype)
    rec_arr = np.empty((B, G), dtype=dtype)
    hp_arr = np.zeros((B, H), dtype=dtype)
    cp_arr = np.zeros((B, H), dtype=dtype)
    cdef real[:, :, ::1] gates = gates_arr
    cdef real[:, :, ::1] c = c_arr
    cdef real[:, :, ::1] h = h_arr
    cdef real[:, ::1] rec = rec_arr
    cdef real[:, ::1] hp = hp_arr
    cdef real[:, ::1] cp = cp_arr
    cdef int bb, t, j
    cdef real ct
    with nogil:
        # input projection for all timesteps at once: gates = x @ wx
        _gemm_rm(c'N', c'N', B * T, G, F, <real>1.0, &x[0, 0, 0], F,
                 &wx[0, 0], G, <real>0.0, &gates[0, 0, 0], G)
        for t in range(T):
            if t > 0:
                _gemm_rm(c'N', c'N', B, G, H, <real>1.0, &hp[0, 0], H,
                         &wh[0, 0], G, <real>0.0, &rec[0, 0], G)
                for bb in range(B):
                    for j in range(G):
                        gates[bb, t, j] += rec[bb, j] + b[j]
            else:
                for bb in range(B):
                    for j in range(G):
                        gates[bb, t, j] += b[j]
            for bb in range(B):
                for j in range(2 * H):
                    gates[bb, t, j] = _sig(gates[bb, t, j])
                for j in range(2 * H, 3 * H):
                    gates[bb, t, j] = _tanh(gates[bb, t, j])
                for j in range(3 * H, 4 * H):
                    gates[bb, t, j] = _sig(gates[bb, t, j])
                for j in range(H):
                    ct = gates[bb, t, H + j] * cp[bb, j] + gates[bb, t, j] * gates[bb, t, 2 * H + j]
                    c[bb, t, j] = ct
                    cp[bb, j] = ct
                    hp[bb, j] = gates[bb, t, 3 * H + j] * _tanh(ct)
                    h[bb, t, j] = hp[bb, j]
    return h_arr, gates_arr, c_arr


def lstm_backward(real[:, :, ::1] x, real[:, ::1] wx, real[:, ::1] wh,
                  real[:, :, ::1] h, real[:, :, ::1] gates, real[:, :, ::1] c,
                  real[:, :, ::1] gh, bint need_gx=True, bint need_gw=True):
    cdef int B = x.shape[0], T = x.shape[1], F = x.shape[2]
    cdef int H = wh.shape[0], G = 4 * H
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    dgates_arr = np.empty((B, T, G), dtype=dtype)
    dp_arr = np.empty((B, G), dtype=dtype)
    hp_arr = np.empty((B, H), dtype=dtype)
    dh_arr = np.zeros((B, H), dtype=dtype)
    dc_arr = np.zeros((B, H), dtype=dtype)
    gx_arr = np.empty((B, T, F), dtype=dtype) if need_gx else None
    gwx_arr = np.zeros((F, G), dtype=dtype) if need_gw else None
    gwh_arr = np.zeros((H, G), dtype=dtype) if need_gw else None
    gb_arr = np.zeros(G, dtype=dtype) if need_gw else None
    cdef real[:, :, ::1] dgates = dgates_arr
    cdef real[:, ::1] dp = dp_arr
    cdef real[:, ::1] hp = hp_arr
    cdef real[:, ::1] dh_next = dh_arr
    cdef real[:, ::1] dc_next = dc_arr
    cdef real[:, :, ::1] gx = gx_arr if need_gx else x[:0]
    cdef real[:, ::1] gwx = gwx_arr if need_gw else wx[:0]
    cdef real[:, ::1] gwh = gwh_arr if need_gw else wh[:0]
    cdef real[::1] gb = gb_arr if need_gw else x[0, 0]
    cdef int bb, t, j
    cdef real iv, fv, gv, ov, ct, cpv, tc, dh, dc, di, df, dg, do
    with nogil:
        for t in range(T - 1, -1, -1):
            for bb in range(B):
                for j in range(H):
                    iv = gates[bb, t, j]
                    fv = gates[bb, t, H + j]
                    gv = gates[bb, t, 2 * H + j]
                    ov = gates[bb, t, 3 * H + j]
                    ct = c[bb, t, j]
                    cpv = c[bb, t - 1, j] if t > 0 else <real>0.0
                    tc = _tanh(ct)
                    dh = gh[bb, t, j] + dh_next[bb, j]
                    dc = dc_next[bb, j] + dh * ov * (<real>1.0 - tc * tc)
                    di = dc * gv
                    df = dc * cpv
                    dg = dc * iv
                    do = dh * tc
                    dp[bb, j] = di * iv * (<real>1.0 - iv)
                    dp[bb, H + j] = df * fv * (<real>1.0 - fv)
                    dp[bb, 2 * H + j] = dg * (<real>1.0 - gv * gv)
                    dp[bb, 3 * H + j] = do * ov * (<real>1.0 - ov)
                    dc_next[bb, j] = dc * fv
                memcpy(&dgates[bb, t, 0], &dp[bb, 0], G * sizeof(real))
            # dh_next = dp @ wh^T
            _gemm_rm(c'N', c'T', B, H, G, <real>1.0, &dp[0, 0], G,
                     &wh[0, 0], G, <real>0.0, &dh_next[0, 0], H)
            if need_gw and t > 0:
                for bb in range(B):
                    memcpy(&hp[bb, 0], &h[bb, t - 1, 0], H * sizeof(real))
                # gwh += hp^T @ dp
                _gemm_rm(c'T', c'N', H, G, B, <real>1.0, &hp[0, 0], H,
                         &dp[0, 0], G, <real>1.0, &gwh[0, 0], G)
        if need_gx:
            # gx = dgates.reshape(B*T, G) @ wx^T
            _gemm_rm(c'N', c'T', B * T, F, G, <real>1.0, &dgates[0, 0, 0], G,
                     &wx[0, 0], G, <real>0.0, &gx[0, 0, 0], F)
        if need_gw:
            # gwx = x.reshape(B*T, F)^T @ dgates.reshape(B*T, G)
            _gemm_rm(c'T', c'N', F, G, B * T, <real>1.0, &x[0, 0, 0], F,
                     &dgates[0, 0, 0], G, <real>1.0, &gwx[0, 0], G)
            for bb in range(B):
                for t in range(T):
                    for j in range(G):
                        gb[j] += dgates[bb, t, j]
    return gx_arr, gwx_arr, gwh_arr, gb_arr
