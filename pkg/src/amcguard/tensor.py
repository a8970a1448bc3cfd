"""Dense tensors with reverse-mode automatic differentiation.

The engine is tape-based: operations compute eagerly on numpy arrays and,
when a GradientTape is active in the current thread, append one record per
primitive op. `backward(tape, loss)` replays the records in reverse and
returns a gradient for every watched tensor (a zero tensor when the loss
does not depend on it).

Conventions:
  * default element type is float32; pass dtype=np.float64 (or use
    set_default_dtype / dtype_scope) for the 64-bit oracle configuration;
  * elementwise ops require identical shapes; there is no broadcasting
    beyond the documented bias additions inside dense/conv1d;
  * ops are pure and thread-safe on disjoint tensors; a tape belongs to a
    single forward pass (it is installed thread-locally and cannot nest).

Set AMCGUARD_CHECK_FINITE=1 (or call set_finite_checks) to assert that
every op output is finite; this is an error condition per the library
contract, checked lazily by default for speed.
"""

from __future__ import annotations

import contextlib
import os
import threading
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, NumericalError, ShapeError

_DEFAULT_DTYPE = np.float32
_CHECK_FINITE = os.environ.get("AMCGUARD_CHECK_FINITE") == "1"
_tls = threading.local()


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dt.type


@contextlib.contextmanager
def dtype_scope(dtype):
    """Temporarily switch the default element type (the 64-bit test build)."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


def set_finite_checks(enabled: bool) -> None:
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class Tensor:
    """Dense n-dimensional array of float32/float64 values."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"

    # convenience arithmetic used by tests and small compositions
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


def dump_csv(tensor: Tensor, path) -> None:
    """Debug dump: flat row-major values, one per line."""
    np.savetxt(path, tensor.data.reshape(-1), fmt="%.9g")


class GradientTape:
    """Ordered record of primitive ops applied during one forward pass.

    Append-only while active; frozen permanently once a backward pass has
    started. `gradient` may be called repeatedly (e.g. once per class
    logit) on the frozen tape.
    """

    def __init__(self):
        self._records: list[tuple] = []
        self._watched: dict[int, Tensor] = {}
        self._frozen = False

    def __enter__(self):
        if getattr(_tls, "tape", None) is not None:
            raise ContractError("a GradientTape is already active in this thread")
        _tls.tape = self
        return self

    def __exit__(self, *exc):
        _tls.tape = None
        return False

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            if not isinstance(t, Tensor):
                raise ContractError("watch() expects Tensor arguments")
            self._watched[id(t)] = t

    @property
    def watched(self) -> list[Tensor]:
        return list(self._watched.values())

    def _record(self, name: str, out: Tensor, inputs: tuple, backward_fn: Callable) -> None:
        if self._frozen:
            raise ContractError("tape is frozen after backward()")
        self._records.append((name, out, inputs, backward_fn))

    def first_nonfinite_op(self) -> str | None:
        """Name of the earliest recorded op whose output is not finite."""
        for name, out, _, _ in self._records:
            if not np.all(np.isfinite(out.data)):
                return name
        return None

    def gradient(self, loss: Tensor, sources=None):
        """Gradients of a scalar loss w.r.t. sources (default: watched).

        Returns a single Tensor when `sources` is a Tensor, else a list
        aligned with the given sequence.
        """
        single = isinstance(sources, Tensor)
        if sources is None:
            srcs = self.watched
        elif single:
            srcs = [sources]
        else:
            srcs = list(sources)
        grads = _run_backward(self, loss, srcs)
        return grads[0] if single else grads


def active_tape() -> GradientTape | None:
    return getattr(_tls, "tape", None)


def backward(tape: GradientTape, loss: Tensor) -> dict[Tensor, Tensor]:
    """Gradients of a scalar loss for every watched tensor on the tape."""
    srcs = tape.watched
    grads = _run_backward(tape, loss, srcs)
    return {s: g for s, g in zip(srcs, grads)}


def _run_backward(tape: GradientTape, loss: Tensor, sources: Sequence[Tensor]):
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    tape._frozen = True
    relevant = {id(s) for s in sources}
    needed = []
    for rec in tape._records:
        _, out, inputs, _ = rec
        if any(id(i) in relevant for i in inputs):
            relevant.add(id(out))
            needed.append(rec)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for name, out, inputs, backward_fn in reversed(needed):
        g_out = pending.pop(id(out), None)
        if g_out is None:
            continue
        need = tuple(id(i) in relevant for i in inputs)
        gs = backward_fn(g_out, need)
        for inp, gi in zip(inputs, gs):
            if gi is None:
                continue
            key = id(inp)
            if key in pending:
                pending[key] = pending[key] + gi
            else:
                pending[key] = gi
    out = []
    for s in sources:
        g = pending.get(id(s))
        out.append(Tensor(np.zeros_like(s.data)) if g is None else Tensor(g, dtype=s.dtype))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(name: str, out_data: np.ndarray, inputs: tuple, backward_fn: Callable) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(out_data)):
        raise NumericalError(f"op '{name}' produced non-finite values")
    out = Tensor(out_data, dtype=out_data.dtype)
    tape = active_tape()
    if tape is not None:
        tape._record(name, out, inputs, backward_fn)
    return out


def _check_same_shape(name, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} differ")


def _check_same_dtype(name, *ts):
    dt = ts[0].dtype
    for t in ts[1:]:
        if t.dtype != dt:
            raise ShapeError(f"{name}: mixed dtypes {[str(t.dtype) for t in ts]}")


# ---------------------------------------------------------------------------
# elementwise and reduction primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("add", a, b)
    _check_same_dtype("add", a, b)
    return _emit("add", a.data + b.data, (a, b), lambda g, need: (g, g))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("sub", a, b)
    _check_same_dtype("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b), lambda g, need: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("mul", a, b)
    _check_same_dtype("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b), lambda g, need: (g * bd, g * ad))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g, need: (-g,))


def scale(a, s: float) -> Tensor:
    """Multiply by a python scalar (kept out of the elementwise shape rule)."""
    a = _as_tensor(a)
    s = float(s)
    return _emit("scale", a.data * np.asarray(s, dtype=a.dtype), (a,), lambda g, need: (g * s,))


def reduce_sum(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    return _emit(
        "reduce_sum",
        np.asarray(a.data.sum(), dtype=a.dtype),
        (a,),
        lambda g, need: (np.full(shape, g, dtype=a.dtype),),
    )


def reduce_mean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.size
    if n == 0:
        raise ContractError("reduce_mean on empty tensor")
    shape = a.shape
    return _emit(
        "reduce_mean",
        np.asarray(a.data.mean(), dtype=a.dtype),
        (a,),
        lambda g, need: (np.full(shape, g / n, dtype=a.dtype),),
    )


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _emit("relu", np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g, need: (g * mask,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        s = (1.0 / (1.0 + np.exp(-a.data))).astype(a.dtype)
    return _emit("sigmoid", s, (a,), lambda g, need: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.data)
    return _emit("tanh", t, (a,), lambda g, need: (g * (1.0 - t * t),))


# ---------------------------------------------------------------------------
# linear-algebra primitives


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_dtype("matmul", a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g, need):
        ga = g @ bd.T if need[0] else None
        gb = ad.T @ g if need[1] else None
        return ga, gb

    return _emit("matmul", ad @ bd, (a, b), bwd)


def dense(x, weights, bias) -> Tensor:
    """Affine map: [F] or [B,F] times [F,U] plus [U]."""
    x, weights, bias = _as_tensor(x), _as_tensor(weights), _as_tensor(bias)
    _check_same_dtype("dense", x, weights, bias)
    if weights.ndim != 2 or bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: weights {weights.shape} / bias {bias.shape}")
    batched = x.ndim == 2
    if (batched and x.shape[1] != weights.shape[0]) or (not batched and x.shape != (weights.shape[0],)):
        raise ShapeError(f"dense: input {x.shape} does not match weights {weights.shape}")
    xd = x.data if batched else x.data[None, :]
    wd, bd = weights.data, bias.data
    y = xd @ wd + bd

    def bwd(g, need):
        g2 = g if batched else g[None, :]
        gx = g2 @ wd.T if need[0] else None
        gw = xd.T @ g2 if need[1] else None
        gb = g2.sum(axis=0) if need[2] else None
        if gx is not None and not batched:
            gx = gx[0]
        return gx, gw, gb

    return _emit("dense", y if batched else y[0], (x, weights, bias), bwd)


def conv1d(x, kernels_t, bias) -> Tensor:
    """Zero-padded same-length 1-D convolution over the time axis.

    x: [T, Cin] or [B, T, Cin]; kernels: [K, W, Cin]; bias: [K].
    """
    x, kernels_t, bias = _as_tensor(x), _as_tensor(kernels_t), _as_tensor(bias)
    _check_same_dtype("conv1d", x, kernels_t, bias)
    if kernels_t.ndim != 3:
        raise ShapeError(f"conv1d: kernels must be [K,W,Cin], got {kernels_t.shape}")
    K, W, Cin = kernels_t.shape
    batched = x.ndim == 3
    if x.ndim not in (2, 3) or x.shape[-1] != Cin:
        raise ShapeError(f"conv1d: input {x.shape} does not match kernels {kernels_t.shape}")
    if bias.shape != (K,):
        raise ShapeError(f"conv1d: bias {bias.shape}, expected ({K},)")
    T = x.shape[-2]
    if W > T:
        raise ContractError(f"conv1d: kernel width {W} exceeds input length {T}")
    xd = x.data if batched else x.data[None]
    kd, bd = kernels_t.data, bias.data
    y = kernels.conv1d_forward(xd, kd, bd)

    def bwd(g, need):
        g3 = np.ascontiguousarray(g if batched else g[None])
        gx, gk, gb = kernels.conv1d_backward(xd, kd, g3, need_gx=need[0], need_gk=need[1])
        if gx is not None and not batched:
            gx = gx[0]
        if not need[2]:
            gb = None
        return gx, gk, gb

    return _emit("conv1d", y if batched else y[0], (x, kernels_t, bias), bwd)


def lstm_forward(x, wx, wh, b) -> Tensor:
    """Per-timestep hidden states of a standard LSTM (zero initial state).

    x: [T, F] or [B, T, F]; wx: [F, 4H]; wh: [H, 4H]; b: [4H]. Gate blocks
    ordered input/forget/candidate/output.
    """
    x, wx, wh, b = _as_tensor(x), _as_tensor(wx), _as_tensor(wh), _as_tensor(b)
    _check_same_dtype("lstm", x, wx, wh, b)
    if wx.ndim != 2 or wh.ndim != 2:
        raise ShapeError("lstm: weights must be rank-2")
    F, G = wx.shape
    H = wh.shape[0]
    if G != 4 * H or wh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm: inconsistent weights wx{wx.shape} wh{wh.shape} b{b.shape}")
    batched = x.ndim == 3
    if x.ndim not in (2, 3) or x.shape[-1] != F:
        raise ShapeError(f"lstm: input {x.shape} does not match wx {wx.shape}")
    xd = x.data if batched else x.data[None]
    h, gates, cells = kernels.lstm_forward(xd, wx.data, wh.data, b.data)

    def bwd(g, need):
        g3 = np.ascontiguousarray(g if batched else g[None])
        need_gw = need[1] or need[2] or need[3]
        gx, gwx, gwh, gb = kernels.lstm_backward(
            xd, wx.data, wh.data, h, gates, cells, g3, need_gx=need[0], need_gw=need_gw
        )
        if gx is not None and not batched:
            gx = gx[0]
        return gx, (gwx if need[1] else None), (gwh if need[2] else None), (gb if need[3] else None)

    return _emit("lstm", h if batched else h[0], (x, wx, wh, b), bwd)


def sum_over_time(x) -> Tensor:
    """Reduce [T, H] -> [H] (or [B, T, H] -> [B, H]) by summation over T."""
    x = _as_tensor(x)
    if x.ndim not in (2, 3):
        raise ShapeError(f"sum_over_time expects rank-2/3 input, got {x.shape}")
    axis = x.ndim - 2
    T = x.shape[axis]
    y = x.data.sum(axis=axis)

    def bwd(g, need):
        return (np.repeat(np.expand_dims(g, axis), T, axis=axis),)

    return _emit("sum_over_time", y, (x,), bwd)


def softmax(x) -> Tensor:
    """Probability vector over the last axis (max-subtracted for stability)."""
    x = _as_tensor(x)
    if x.size == 0 or x.shape[-1] == 0:
        raise ContractError("softmax on empty vector")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bwd(g, need):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - dot),)

    return _emit("softmax", p.astype(x.dtype), (x,), bwd)


CROSSENTROPY_CLAMP = 1e-12


def categorical_crossentropy(probs, labels) -> Tensor:
    """Mean negative log-likelihood of true classes under `probs`.

    probs: [U] or [B, U] probability rows; labels: int index, int array [B],
    or a one-hot array of the same shape as probs. Probabilities are clamped
    at 1e-12 before the log.
    """
    probs = _as_tensor(probs)
    if probs.size == 0 or probs.shape[-1] == 0:
        raise ContractError("crossentropy on empty probability vector")
    batched = probs.ndim == 2
    if probs.ndim not in (1, 2):
        raise ShapeError(f"crossentropy: probs rank must be 1 or 2, got {probs.shape}")
    U = probs.shape[-1]
    B = probs.shape[0] if batched else 1
    if isinstance(labels, Tensor):
        labels = labels.data
    labels = np.asarray(labels)
    if labels.dtype.kind in "iu" and labels.shape in ((), (B,)):
        idx = labels.reshape(-1).astype(np.int64)
        if idx.min() < 0 or idx.max() >= U:
            raise ContractError(f"crossentropy: label out of range [0, {U})")
        onehot = np.zeros((B, U), dtype=probs.dtype)
        onehot[np.arange(B), idx] = 1
    elif labels.shape == probs.shape:
        onehot = labels.astype(probs.dtype)
        if batched is False:
            onehot = onehot[None, :]
    else:
        raise ShapeError(f"crossentropy: labels {labels.shape} incompatible with probs {probs.shape}")
    p2 = probs.data if batched else probs.data[None, :]
    clamped = np.maximum(p2, CROSSENTROPY_CLAMP)
    loss = -(onehot * np.log(clamped)).sum() / B

    def bwd(g, need):
        gp = np.zeros_like(p2)
        live = p2 >= CROSSENTROPY_CLAMP
        gp[live] = -(onehot[live] / clamped[live]) * (g / B)
        return (gp if batched else gp[0],)

    return _emit("crossentropy", np.asarray(loss, dtype=probs.dtype), (probs,), bwd)


class BatchNormState:
    """Running statistics + hyperparameters for one batchnorm layer."""

    def __init__(self, num_features: int, momentum: float = 0.99, eps: float = 1e-5, dtype=None):
        dt = dtype or default_dtype()
        self.running_mean = np.zeros(num_features, dtype=dt)
        self.running_var = np.ones(num_features, dtype=dt)
        self.momentum = float(momentum)
        self.eps = float(eps)

    def copy(self) -> "BatchNormState":
        out = BatchNormState(len(self.running_mean), self.momentum, self.eps, self.running_mean.dtype)
        out.running_mean[:] = self.running_mean
        out.running_var[:] = self.running_var
        return out


def batchnorm(x, gamma, beta, state: BatchNormState, training: bool) -> Tensor:
    """Per-feature normalization with learned scale/shift.

    Training mode normalizes by batch statistics (biased variance) and
    updates `state` in place; inference mode uses the running statistics.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    _check_same_dtype("batchnorm", x, gamma, beta)
    batched = x.ndim == 2
    if x.ndim not in (1, 2):
        raise ShapeError(f"batchnorm expects [F] or [B,F], got {x.shape}")
    F = x.shape[-1]
    if gamma.shape != (F,) or beta.shape != (F,):
        raise ShapeError(f"batchnorm: param shapes {gamma.shape}/{beta.shape} vs features {F}")
    xd = x.data if batched else x.data[None, :]
    B = xd.shape[0]
    gd, bd = gamma.data, beta.data
    if training:
        mean = xd.mean(axis=0)
        var = xd.var(axis=0)
        m = state.momentum
        state.running_mean[:] = m * state.running_mean + (1 - m) * mean
        state.running_var[:] = m * state.running_var + (1 - m) * var
    else:
        mean = state.running_mean.astype(xd.dtype)
        var = state.running_var.astype(xd.dtype)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (xd - mean) * inv
    y = xhat * gd + bd

    def bwd(g, need):
        g2 = g if batched else g[None, :]
        dxhat = g2 * gd
        if training:
            gx = inv / B * (B * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            gx = dxhat * inv
        if not batched:
            gx = gx[0]
        gg = (g2 * xhat).sum(axis=0) if need[1] else None
        gb = g2.sum(axis=0) if need[2] else None
        return (gx if need[0] else None), gg, gb

    return _emit("batchnorm", (y if batched else y[0]).astype(xd.dtype), (x, gamma, beta), bwd)
