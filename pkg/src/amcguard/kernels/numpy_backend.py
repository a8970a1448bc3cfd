"""Numpy implementations of the hot kernels.

This is the fallback backend used when the compiled extension is not
available; both backends expose the same four functions with identical
array contracts (C-contiguous float32 or float64, batch-first).

Gate layout for LSTM weight matrices is [input, forget, candidate, output]
blocks of width H along the last axis.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def _sigmoid(z):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def conv1d_forward(x, k, b):
    """Same-length 1-D convolution.

    x: [B, T, Cin], k: [K, W, Cin], b: [K] -> y[B, T, K] where
    y[t, kk] = b[kk] + sum_{w,c} k[kk, w, c] * x[t + w - W//2, c]
    with zero padding outside [0, T).
    """
    B, T, Cin = x.shape
    K, W, _ = k.shape
    pl = W // 2
    xp = np.zeros((B, T + W - 1, Cin), dtype=x.dtype)
    xp[:, pl : pl + T] = x
    # cols[b, t, c, w] = xp[b, t + w, c]
    cols = sliding_window_view(xp, W, axis=1)
    y = np.tensordot(cols, k, axes=([2, 3], [2, 1]))
    y += b
    return np.ascontiguousarray(y)


def conv1d_backward(x, k, gy, need_gx=True, need_gk=True):
    B, T, Cin = x.shape
    K, W, _ = k.shape
    pl = W // 2
    gx = gk = None
    if need_gk:
        xp = np.zeros((B, T + W - 1, Cin), dtype=x.dtype)
        xp[:, pl : pl + T] = x
        cols = sliding_window_view(xp, W, axis=1)  # [B, T, Cin, W]
        gk = np.tensordot(gy, cols, axes=([0, 1], [0, 1]))  # [K, Cin, W]
        gk = np.ascontiguousarray(gk.transpose(0, 2, 1))
    if need_gx:
        gxp = np.zeros((B, T + W - 1, Cin), dtype=x.dtype)
        kf = k.reshape(K, W * Cin)
        contrib = (gy.reshape(B * T, K) @ kf).reshape(B, T, W, Cin)
        for w in range(W):
            gxp[:, w : w + T] += contrib[:, :, w]
        gx = np.ascontiguousarray(gxp[:, pl : pl + T])
    gb = gy.sum(axis=(0, 1))
    return gx, gk, gb


def lstm_forward(x, wx, wh, b):
    """Full-sequence LSTM with zero initial state.

    x: [B, T, F], wx: [F, 4H], wh: [H, 4H], b: [4H].
    Returns (h[B, T, H], gates[B, T, 4H], c[B, T, H]) where gates holds the
    post-activation i/f/g/o values needed by the backward pass.
    """
    B, T, F = x.shape
    H = wh.shape[0]
    xp = (x.reshape(B * T, F) @ wx + b).reshape(B, T, 4 * H)
    gates = np.empty((B, T, 4 * H), dtype=x.dtype)
    c = np.empty((B, T, H), dtype=x.dtype)
    h = np.empty((B, T, H), dtype=x.dtype)
    h_prev = np.zeros((B, H), dtype=x.dtype)
    c_prev = np.zeros((B, H), dtype=x.dtype)
    for t in range(T):
        pre = xp[:, t] + h_prev @ wh
        i = _sigmoid(pre[:, :H])
        f = _sigmoid(pre[:, H : 2 * H])
        g = np.tanh(pre[:, 2 * H : 3 * H])
        o = _sigmoid(pre[:, 3 * H :])
        c_t = f * c_prev + i * g
        h_t = o * np.tanh(c_t)
        gates[:, t, :H] = i
        gates[:, t, H : 2 * H] = f
        gates[:, t, 2 * H : 3 * H] = g
        gates[:, t, 3 * H :] = o
        c[:, t] = c_t
        h[:, t] = h_t
        h_prev = h_t
        c_prev = c_t
    return h, gates, c


def lstm_backward(x, wx, wh, h, gates, c, gh, need_gx=True, need_gw=True):
    """Reverse pass matching lstm_forward; gh is dLoss/dh, [B, T, H]."""
    B, T, F = x.shape
    H = wh.shape[0]
    dtype = x.dtype
    dgates = np.empty((B, T, 4 * H), dtype=dtype)
    gwh = np.zeros((H, 4 * H), dtype=dtype) if need_gw else None
    dh_next = np.zeros((B, H), dtype=dtype)
    dc_next = np.zeros((B, H), dtype=dtype)
    for t in range(T - 1, -1, -1):
        i = gates[:, t, :H]
        f = gates[:, t, H : 2 * H]
        g = gates[:, t, 2 * H : 3 * H]
        o = gates[:, t, 3 * H :]
        c_t = c[:, t]
        c_prev = c[:, t - 1] if t > 0 else np.zeros((B, H), dtype=dtype)
        tc = np.tanh(c_t)
        dh = gh[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dg = dc * i
        di = dc * g
        df = dc * c_prev
        do = dh * tc
        dp = dgates[:, t]
        dp[:, :H] = di * i * (1.0 - i)
        dp[:, H : 2 * H] = df * f * (1.0 - f)
        dp[:, 2 * H : 3 * H] = dg * (1.0 - g * g)
        dp[:, 3 * H :] = do * o * (1.0 - o)
        dh_next = dp @ wh.T
        if need_gw:
            h_prev = h[:, t - 1] if t > 0 else None
            if h_prev is not None:
                gwh += h_prev.T @ dp
        dc_next = dc * f
    flat = dgates.reshape(B * T, 4 * H)
    gx = np.ascontiguousarray((flat @ wx.T).reshape(B, T, F)) if need_gx else None
    gwx = x.reshape(B * T, F).T @ flat if need_gw else None
    gb = flat.sum(axis=0) if need_gw else None
    if need_gw:
        gwx = np.ascontiguousarray(gwx)
    return gx, gwx, gwh, gb
