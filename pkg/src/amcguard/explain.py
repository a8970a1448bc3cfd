"""Gradient-based Shapley attribution with an exact enumeration oracle.

Expected gradients approximate Shapley values by Monte-Carlo over
(baseline, path position) pairs: each draw takes a baseline x' from a
background set, a path position alpha, and accumulates
(x - x') * grad f(x' + alpha * (x - x')) for the explained class logit.
Alphas are stratified per explanation (jittered k/K grid), which keeps the
estimator unbiased while sharply reducing path-integration variance.

Models are duck-typed: anything with
    value(x_batch, class_index) -> scores [B]
    value_and_grad(x_batch, class_index) -> (scores [B], grads like x_batch)
works; ClassifierLogits adapts trained ModelParams (pre-softmax logit
target, inference mode), AffineModel provides the closed-form reference.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import binio
from . import model as mdl
from . import tensor as T
from .errors import ContractError, ShapeError
from .rng import stream

SHAP_MAGIC = b"AMCS"
SHAP_VERSION = 1
MAX_EXACT_PLAYERS = 12
BACKGROUND_CAP = 5000


class ClassifierLogits:
    """Adapter exposing per-class logits and input gradients of a model."""

    def __init__(self, params):
        self.params = params
        self.num_classes = params.config.num_classes

    def value(self, x_batch, class_index):
        x = np.asarray(x_batch, dtype=self.params.conv_w.dtype)
        logits = mdl.forward_logits(self.params, T.Tensor(x, dtype=x.dtype), training=False)
        return logits.data[:, class_index].copy()

    def value_and_grad(self, x_batch, class_index):
        x = np.asarray(x_batch, dtype=self.params.conv_w.dtype)
        xt = T.Tensor(x, dtype=x.dtype)
        mask = np.zeros((len(x), self.num_classes), dtype=x.dtype)
        mask[:, class_index] = 1
        with T.GradientTape() as tape:
            tape.watch(xt)
            logits = mdl.forward_logits(self.params, xt, training=False)
            score_sum = T.reduce_sum(T.mul(logits, T.Tensor(mask, dtype=x.dtype)))
        g = tape.gradient(score_sum, xt)
        return logits.data[:, class_index].copy(), g.data


class AffineModel:
    """f(x) = w . x + b; the closed-form attribution is w_i (x_i - x'_i)."""

    def __init__(self, weights, bias=0.0):
        self.w = np.asarray(weights, dtype=np.float64)
        self.b = float(bias)

    def value(self, x_batch, class_index=0):
        x = np.asarray(x_batch, dtype=np.float64)
        return x.reshape(len(x), -1) @ self.w.reshape(-1) + self.b

    def value_and_grad(self, x_batch, class_index=0):
        x = np.asarray(x_batch, dtype=np.float64)
        g = np.broadcast_to(self.w.reshape(-1), (len(x), self.w.size)).reshape(x.shape).copy()
        return self.value(x, class_index), g


@dataclass
class ExplainerConfig:
    background: np.ndarray  # [M, T, 2] baseline frames
    num_samples: int = 256
    seed: int = 0

    def __post_init__(self):
        self.background = np.asarray(self.background)
        if len(self.background) == 0:
            raise ContractError("explainer background must be non-empty")
        if self.num_samples < 1:
            raise ContractError("num_samples must be >= 1")

    def describe(self) -> dict:
        return {
            "background_frames": int(len(self.background)),
            "num_samples": self.num_samples,
            "seed": self.seed,
        }


def make_background(dataset, cap: int = BACKGROUND_CAP, seed: int = 0) -> np.ndarray:
    """Background frames for the explainer, subsampled to `cap` at most."""
    frames = dataset.samples if hasattr(dataset, "samples") else np.asarray(dataset)
    if len(frames) <= cap:
        return np.array(frames)
    idx = stream(seed, 0xB6).choice(len(frames), size=cap, replace=False)
    return np.array(frames[np.sort(idx)])


def integrated_gradients(score_model, frame, baseline, class_index, steps: int) -> np.ndarray:
    """Midpoint-rule path integral of input gradients from baseline to frame."""
    if steps < 1:
        raise ContractError("steps must be >= 1")
    x = np.asarray(frame, dtype=np.float64)
    b = np.asarray(baseline, dtype=np.float64)
    if x.shape != b.shape:
        raise ShapeError(f"frame {x.shape} and baseline {b.shape} differ")
    alphas = (np.arange(steps) + 0.5) / steps
    total = np.zeros_like(x)
    chunk = 256
    for lo in range(0, steps, chunk):
        a = alphas[lo : lo + chunk]
        batch = b[None] + a.reshape(-1, *([1] * x.ndim)) * (x - b)[None]
        _, grads = score_model.value_and_grad(batch, class_index)
        total += np.asarray(grads, dtype=np.float64).sum(axis=0)
    return (x - b) * total / steps


def _draws(cfg: ExplainerConfig, frame_index: int, class_index: int):
    """Deterministic (baseline index, alpha) draws for one explanation.

    Baselines cycle through random permutations of the background
    (balanced, without replacement per cycle) and alphas are a jittered
    stratified grid, randomly paired; both choices keep the estimator
    unbiased while cutting its variance well below plain iid sampling.
    """
    rng = stream(cfg.seed, frame_index, class_index)
    k = cfg.num_samples
    m = len(cfg.background)
    reps = -(-k // m)
    idx = np.concatenate([rng.permutation(m) for _ in range(reps)])[:k]
    alphas = (np.arange(k) + rng.uniform(size=k)) / k
    alphas = alphas[rng.permutation(k)]
    return idx, alphas


def expected_gradients(
    score_model, frame, cfg: ExplainerConfig, class_index, frame_index: int = 0
) -> np.ndarray:
    """Monte-Carlo Shapley approximation for one frame and class."""
    x = np.asarray(frame, dtype=np.float64)
    if x.shape != cfg.background.shape[1:]:
        raise ShapeError(f"frame {x.shape} does not match background frames {cfg.background.shape[1:]}")
    idx, alphas = _draws(cfg, frame_index, class_index)
    total = np.zeros_like(x)
    chunk = 256
    for lo in range(0, len(idx), chunk):
        bl = cfg.background[idx[lo : lo + chunk]].astype(np.float64)
        a = alphas[lo : lo + chunk].reshape(-1, *([1] * x.ndim))
        batch = bl + a * (x[None] - bl)
        _, grads = score_model.value_and_grad(batch, class_index)
        total += ((x[None] - bl) * np.asarray(grads, dtype=np.float64)).sum(axis=0)
    return total / len(idx)


@dataclass
class ShapTensor:
    """Per-sample, per-timestep, per-channel, per-class attributions."""

    values: np.ndarray  # [N, T, 2, C] float32
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 4 or self.values.shape[2] != 2:
            raise ShapeError(f"ShapTensor must be [N,T,2,C], got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("ShapTensor contains non-finite values")

    @property
    def shape(self):
        return self.values.shape


def explain_dataset(score_model, dataset, cfg: ExplainerConfig, progress=None) -> ShapTensor:
    """Expected gradients for every frame and every class."""
    frames = dataset.samples if hasattr(dataset, "samples") else np.asarray(dataset)
    n, t_len, ch = frames.shape
    num_classes = getattr(score_model, "num_classes", None)
    if num_classes is None:
        raise ContractError("score model does not expose num_classes")
    out = np.empty((n, t_len, ch, num_classes), dtype=np.float32)
    for i in range(n):
        for c in range(num_classes):
            out[i, :, :, c] = expected_gradients(score_model, frames[i], cfg, c, frame_index=i)
        if progress is not None:
            progress(i + 1, n)
    return ShapTensor(out, {"explainer": cfg.describe()})


# ---------------------------------------------------------------------------
# exact Shapley oracle


class CoalitionValueFn:
    """v(S): model score with features outside S replaced by baseline values.

    Operates on flat feature vectors; v(full set) = f(x), v(empty) = f(x').
    """

    def __init__(self, score_model, x, baseline, class_index=0):
        self.model = score_model
        self.x = np.asarray(x, dtype=np.float64).reshape(-1)
        self.baseline = np.asarray(baseline, dtype=np.float64).reshape(-1)
        if self.x.shape != self.baseline.shape:
            raise ShapeError("x and baseline must have equal feature counts")
        self.class_index = class_index
        self.n = len(self.x)

    def __call__(self, mask) -> float:
        mask = np.asarray(mask, dtype=bool)
        z = np.where(mask, self.x, self.baseline)
        return float(self.model.value(z[None], self.class_index)[0])


def exact_shapley(value_fn, n: int) -> np.ndarray:
    """Shapley values by full subset enumeration with factorial weights.

    `value_fn(mask)` maps a boolean inclusion mask of length n to v(S).
    """
    if n > MAX_EXACT_PLAYERS:
        raise ContractError(f"exact enumeration supports n <= {MAX_EXACT_PLAYERS}, got {n}")
    if n < 1:
        raise ContractError("need at least one player")
    values = np.empty(2**n, dtype=np.float64)
    for m in range(2**n):
        mask = [(m >> i) & 1 == 1 for i in range(n)]
        values[m] = value_fn(np.array(mask))
    fact = [math.factorial(k) for k in range(n + 1)]
    phi = np.zeros(n, dtype=np.float64)
    for i in range(n):
        bit = 1 << i
        for m in range(2**n):
            if m & bit:
                continue
            s = bin(m).count("1")
            w = fact[s] * fact[n - s - 1] / fact[n]
            phi[i] += w * (values[m | bit] - values[m])
    return phi


def heatmap(shap: ShapTensor, predictions, true_labels) -> np.ndarray:
    """[C,C] matrix: entry (i,j) sums all attributions toward class j over
    frames with true class i predicted as j."""
    vals = shap.values
    n, _, _, c = vals.shape
    predictions = np.asarray(predictions)
    true_labels = np.asarray(true_labels)
    if len(predictions) != n or len(true_labels) != n:
        raise ShapeError("predictions/true_labels length does not match ShapTensor")
    if predictions.max(initial=0) >= c or true_labels.max(initial=0) >= c:
        raise ShapeError("class index out of range for ShapTensor")
    out = np.zeros((c, c), dtype=np.float64)
    for i in range(n):
        out[true_labels[i], predictions[i]] += float(vals[i, :, :, predictions[i]].sum())
    return out


# ---------------------------------------------------------------------------
# persistence


def save_shap(shap: ShapTensor, path, model_checksum: int = 0) -> None:
    path = str(path)
    body = bytearray()
    for d in shap.values.shape:
        body += binio.pack_u32(d)
    body += shap.values.astype("<f4").tobytes()
    body += binio.pack_u32(model_checksum & 0xFFFFFFFF)
    body += binio.pack_blob(json.dumps(shap.provenance, sort_keys=True).encode())
    binio.write_envelope(path, SHAP_MAGIC, SHAP_VERSION, bytes(body))


def load_shap(path) -> ShapTensor:
    path = str(path)
    body = binio.read_envelope(path, SHAP_MAGIC, SHAP_VERSION)
    up = binio.Unpacker(body, path)
    dims = tuple(up.u32(f"dim {i}") for i in range(4))
    count = int(np.prod(dims))
    raw = up.take(count * 4, "attribution data")
    checksum = up.u32("model checksum")
    provenance = json.loads(up.blob("provenance").decode())
    up.done()
    provenance["model_checksum"] = checksum
    values = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    return ShapTensor(values, provenance)
