"""CNN-LSTM modulation classifier: architecture, training, persistence.

Pipeline: conv1d -> relu -> LSTM -> sum over time -> batchnorm -> fc1 ->
relu -> fc2 -> softmax. The time axis is only ever reduced by summation,
so the same parameters (except fc1, which is sized by the feature vector)
accept any input length >= the conv kernel width; the pruning defense
depends on that.

Checkpoint format: magic "AMCM", version u32, JSON blob (length-prefixed;
model config + named parameter list + provenance), then each parameter
tensor (length-prefixed name, rank u32, extents u32 each, float32 LE
data), trailing CRC32.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import binio
from . import tensor as T
from .errors import ContractError, NumericalError, ShapeError
from .optim import Adam
from .rng import stream

MODEL_MAGIC = b"AMCM"
MODEL_VERSION = 1


@dataclass
class ModelConfig:
    conv_kernels: int = 128
    conv_width: int = 8
    lstm_units: int = 128
    fc1_units: int = 256
    num_classes: int = 11

    def __post_init__(self):
        for name in ("conv_kernels", "conv_width", "lstm_units", "fc1_units", "num_classes"):
            if getattr(self, name) < 1:
                raise ContractError(f"ModelConfig.{name} must be >= 1")

    def describe(self) -> dict:
        return {
            "conv_kernels": self.conv_kernels,
            "conv_width": self.conv_width,
            "lstm_units": self.lstm_units,
            "fc1_units": self.fc1_units,
            "num_classes": self.num_classes,
        }


@dataclass
class EarlyStopConfig:
    enabled: bool = False
    patience: int = 5
    monitor: str = "val_loss"


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 200
    epochs: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    early_stopping: EarlyStopConfig = field(default_factory=EarlyStopConfig)
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")


PARAM_ORDER = [
    "conv_w", "conv_b", "lstm_wx", "lstm_wh", "lstm_b",
    "bn_gamma", "bn_beta", "bn_mean", "bn_var",
    "fc1_w", "fc1_b", "fc2_w", "fc2_b",
]
TRAINABLE = [n for n in PARAM_ORDER if n not in ("bn_mean", "bn_var")]


class ModelParams:
    """Named parameter tensors plus batchnorm running statistics."""

    def __init__(self, config: ModelConfig, tensors: dict, bn_state: T.BatchNormState):
        self.config = config
        self.tensors = tensors
        self.bn_state = bn_state
        self.validate()

    def __getattr__(self, name):
        try:
            return self.tensors[name]
        except KeyError:
            raise AttributeError(name) from None

    def validate(self):
        c = self.config
        expect = expected_shapes(c)
        for name, shape in expect.items():
            got = self.tensors[name].shape
            if got != shape:
                raise ShapeError(f"param {name}: shape {got}, expected {shape}")
            if not np.all(np.isfinite(self.tensors[name].data)):
                raise NumericalError(f"param {name} contains non-finite values")

    def trainable(self) -> list:
        return [self.tensors[n] for n in TRAINABLE]

    def copy(self) -> "ModelParams":
        tensors = {k: v.copy() for k, v in self.tensors.items()}
        out = ModelParams(self.config, tensors, self.bn_state.copy())
        out.tensors["bn_mean"].data = out.bn_state.running_mean
        out.tensors["bn_var"].data = out.bn_state.running_var
        return out


def expected_shapes(c: ModelConfig) -> dict:
    return {
        "conv_w": (c.conv_kernels, c.conv_width, 2),
        "conv_b": (c.conv_kernels,),
        "lstm_wx": (c.conv_kernels, 4 * c.lstm_units),
        "lstm_wh": (c.lstm_units, 4 * c.lstm_units),
        "lstm_b": (4 * c.lstm_units,),
        "bn_gamma": (c.lstm_units,),
        "bn_beta": (c.lstm_units,),
        "bn_mean": (c.lstm_units,),
        "bn_var": (c.lstm_units,),
        "fc1_w": (c.lstm_units, c.fc1_units),
        "fc1_b": (c.fc1_units,),
        "fc2_w": (c.fc1_units, c.num_classes),
        "fc2_b": (c.num_classes,),
    }


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal(rng, rows, cols):
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    q = q[:rows, :cols] if q.shape[0] >= rows else q.T[:rows, :cols]
    return q


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Fresh parameters: glorot conv/dense, orthogonal LSTM recurrence,
    forget-gate bias 1."""
    rng = stream(seed, 0xA11C)
    c = config
    h = c.lstm_units
    tensors = {}
    tensors["conv_w"] = T.Tensor(
        _glorot(rng, (c.conv_kernels, c.conv_width, 2), c.conv_width * 2, c.conv_kernels)
    )
    tensors["conv_b"] = T.Tensor(np.zeros(c.conv_kernels))
    tensors["lstm_wx"] = T.Tensor(_glorot(rng, (c.conv_kernels, 4 * h), c.conv_kernels, 4 * h))
    wh = np.concatenate([_orthogonal(rng, h, h) for _ in range(4)], axis=1)
    tensors["lstm_wh"] = T.Tensor(wh)
    lb = np.zeros(4 * h)
    lb[h : 2 * h] = 1.0  # forget-gate bias
    tensors["lstm_b"] = T.Tensor(lb)
    tensors["bn_gamma"] = T.Tensor(np.ones(h))
    tensors["bn_beta"] = T.Tensor(np.zeros(h))
    bn_state = T.BatchNormState(h)
    tensors["bn_mean"] = T.Tensor(bn_state.running_mean)
    tensors["bn_var"] = T.Tensor(bn_state.running_var)
    tensors["bn_mean"].data = bn_state.running_mean  # share storage
    tensors["bn_var"].data = bn_state.running_var
    tensors["fc1_w"] = T.Tensor(_glorot(rng, (h, c.fc1_units), h, c.fc1_units))
    tensors["fc1_b"] = T.Tensor(np.zeros(c.fc1_units))
    tensors["fc2_w"] = T.Tensor(_glorot(rng, (c.fc1_units, c.num_classes), c.fc1_units, c.num_classes))
    tensors["fc2_b"] = T.Tensor(np.zeros(c.num_classes))
    return ModelParams(config, tensors, bn_state)


def forward_logits(params: ModelParams, x, training: bool = False) -> T.Tensor:
    """Pre-softmax class scores for [T,2] or [B,T,2] input."""
    x = x if isinstance(x, T.Tensor) else T.Tensor(x)
    if x.shape[-2] < params.config.conv_width:
        raise ContractError(
            f"input length {x.shape[-2]} shorter than conv width {params.config.conv_width}"
        )
    p = params
    h = T.conv1d(x, p.conv_w, p.conv_b)
    h = T.relu(h)
    h = T.lstm_forward(h, p.lstm_wx, p.lstm_wh, p.lstm_b)
    h = T.sum_over_time(h)
    h = T.batchnorm(h, p.bn_gamma, p.bn_beta, p.bn_state, training=training)
    h = T.relu(T.dense(h, p.fc1_w, p.fc1_b))
    return T.dense(h, p.fc2_w, p.fc2_b)


def forward(params: ModelParams, frame) -> T.Tensor:
    """Class probability vector (softmax over logits), inference mode."""
    return T.softmax(forward_logits(params, frame, training=False))


def class_indices(labels, schemes) -> np.ndarray:
    """Map stable scheme ids to dense class indices per the scheme list."""
    lookup = {int(s): i for i, s in enumerate(schemes)}
    try:
        return np.array([lookup[int(l)] for l in np.asarray(labels).reshape(-1)], dtype=np.int64)
    except KeyError as e:
        raise ContractError(f"dataset label {e.args[0]} not in configured schemes {list(lookup)}") from None


class EarlyStopping:
    """Stop when the monitored value fails to improve `patience` times in a row."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.strikes = 0
        self.best_epoch = -1

    def update(self, value: float, epoch: int) -> bool:
        """Record one epoch; True means training should stop."""
        if value < self.best - 1e-12:
            self.best = value
            self.best_epoch = epoch
            self.strikes = 0
            return False
        self.strikes += 1
        return self.strikes >= self.patience


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    stopped_epoch: int | None = None

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "train_acc": self.train_acc,
            "val_loss": self.val_loss,
            "val_acc": self.val_acc,
            "stopped_epoch": self.stopped_epoch,
        }


def _batch_loss_and_grads(params, xb, yb, training=True):
    sources = params.trainable()
    with T.GradientTape() as tape:
        tape.watch(*sources)
        logits = forward_logits(params, T.Tensor(xb), training=training)
        probs = T.softmax(logits)
        loss = T.categorical_crossentropy(probs, yb)
    acc = float(np.mean(np.argmax(probs.data, axis=1) == yb))
    grads = tape.gradient(loss, sources)
    return loss.item(), acc, grads


def _eval_loss_acc(params, x, y, batch_size=512):
    losses = []
    correct = 0
    for i in range(0, len(x), batch_size):
        xb, yb = x[i : i + batch_size], y[i : i + batch_size]
        probs = forward(params, xb)
        loss = T.categorical_crossentropy(probs, yb)
        losses.append(loss.item() * len(xb))
        correct += int(np.sum(np.argmax(probs.data, axis=1) == yb))
    return float(np.sum(losses) / len(x)), correct / len(x)


def train(
    params: ModelParams,
    dataset,
    cfg: TrainConfig,
    schemes=None,
    attack_fn=None,
) -> History:
    """Adam training on a tiny_train-style split; mutates `params`.

    `schemes` lists the scheme ids that define class indices (defaults to
    0..num_classes-1). `attack_fn(params, xb, yb) -> xb_adv` turns each
    batch into a 50/50 clean/adversarial mix (the AT-FGSM baseline).
    """
    if len(dataset) == 0:
        raise ContractError("training dataset is empty")
    schemes = list(schemes) if schemes is not None else list(range(params.config.num_classes))
    if len(schemes) != params.config.num_classes:
        raise ContractError(
            f"{len(schemes)} schemes configured but model has {params.config.num_classes} classes"
        )
    x = dataset.samples
    y = class_indices(dataset.labels, schemes)
    rng = stream(cfg.seed, 0x7AA1)
    order = rng.permutation(len(x))
    n_val = int(round(len(x) * cfg.validation_fraction))
    val_idx, train_idx = order[:n_val], order[n_val:]
    xt, yt = x[train_idx], y[train_idx]
    xv, yv = x[val_idx], y[val_idx]
    opt = Adam(params.trainable(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    hist = History()
    stopper = EarlyStopping(cfg.early_stopping.patience) if cfg.early_stopping.enabled else None
    best_snapshot = None
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(xt))
        losses, accs = [], []
        for i in range(0, len(xt), cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            xb, yb = xt[idx], yt[idx]
            if attack_fn is not None:
                xb_adv = attack_fn(params, xb, yb)
                xb = np.concatenate([xb, xb_adv], axis=0)
                yb = np.concatenate([yb, yb], axis=0)
            loss, acc, grads = _batch_loss_and_grads(params, xb, yb)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"NaN/Inf loss at epoch {epoch} step {i // cfg.batch_size}: "
                    f"learning rate {cfg.learning_rate} may be too high or activations overflowed"
                )
            opt.step(grads)
            losses.append(loss)
            accs.append(acc)
        hist.train_loss.append(float(np.mean(losses)))
        hist.train_acc.append(float(np.mean(accs)))
        if len(xv) > 0:
            vl, va = _eval_loss_acc(params, xv, yv)
            hist.val_loss.append(vl)
            hist.val_acc.append(va)
        if stopper is not None and len(xv) > 0:
            monitored = vl if cfg.early_stopping.monitor == "val_loss" else -va
            improved_before = stopper.best_epoch
            should_stop = stopper.update(monitored, epoch)
            if stopper.best_epoch == epoch and stopper.best_epoch != improved_before:
                best_snapshot = params.copy()
            if should_stop:
                hist.stopped_epoch = epoch
                break
    if best_snapshot is not None and stopper is not None and stopper.strikes > 0:
        # roll back to the best-validation parameters
        for name in PARAM_ORDER:
            params.tensors[name].data[...] = best_snapshot.tensors[name].data
        params.bn_state.running_mean[:] = best_snapshot.bn_state.running_mean
        params.bn_state.running_var[:] = best_snapshot.bn_state.running_var
    return hist


def predict_batch(params: ModelParams, frames, batch_size: int = 512):
    """(predicted class indices, probability matrix) for an [N,T,2] array."""
    frames = np.asarray(frames, dtype=np.float32)
    probs = np.empty((len(frames), params.config.num_classes), dtype=np.float32)
    for i in range(0, len(frames), batch_size):
        probs[i : i + batch_size] = forward(params, frames[i : i + batch_size]).data
    return np.argmax(probs, axis=1), probs


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # [C, C]; row true class, column predicted

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "confusion": self.confusion.tolist()}


def evaluate(params: ModelParams, dataset, schemes=None) -> EvalResult:
    if len(dataset) == 0:
        raise ContractError("evaluate: empty dataset")
    schemes = list(schemes) if schemes is not None else list(range(params.config.num_classes))
    y = class_indices(dataset.labels, schemes)
    pred, _ = predict_batch(params, dataset.samples)
    return confusion_from_predictions(y, pred, params.config.num_classes)


def confusion_from_predictions(y_true, y_pred, num_classes: int) -> EvalResult:
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(np.asarray(y_true), np.asarray(y_pred)):
        conf[int(t), int(p)] += 1
    acc = float(np.trace(conf) / max(1, conf.sum()))
    return EvalResult(acc, conf)


# ---------------------------------------------------------------------------
# checkpoints


def save_model(params: ModelParams, path, extra: dict | None = None) -> None:
    path = str(path)
    meta = {
        "config": params.config.describe(),
        "params": PARAM_ORDER,
        "extra": extra or {},
    }
    body = bytearray()
    body += binio.pack_blob(json.dumps(meta, sort_keys=True).encode())
    for name in PARAM_ORDER:
        arr = params.tensors[name].data.astype("<f4")
        body += binio.pack_blob(name.encode())
        body += binio.pack_u32(arr.ndim)
        for ext in arr.shape:
            body += binio.pack_u32(ext)
        body += arr.tobytes()
    binio.write_envelope(path, MODEL_MAGIC, MODEL_VERSION, bytes(body))


def load_model(path) -> tuple:
    """(ModelParams, extra metadata dict)."""
    path = str(path)
    body = binio.read_envelope(path, MODEL_MAGIC, MODEL_VERSION)
    up = binio.Unpacker(body, path)
    meta = json.loads(up.blob("model metadata").decode())
    config = ModelConfig(**meta["config"])
    tensors = {}
    for expected_name in meta["params"]:
        name = up.blob("parameter name").decode()
        if name != expected_name:
            raise ContractError(f"{path}: parameter order mismatch ({name} != {expected_name})")
        rank = up.u32(f"{name} rank")
        shape = tuple(up.u32(f"{name} extent {i}") for i in range(rank))
        count = int(np.prod(shape)) if shape else 1
        raw = up.take(count * 4, f"{name} data")
        tensors[name] = T.Tensor(np.frombuffer(raw, dtype="<f4").reshape(shape).copy())
    up.done()
    h = config.lstm_units
    bn_state = T.BatchNormState(h)
    bn_state.running_mean[:] = tensors["bn_mean"].data
    bn_state.running_var[:] = tensors["bn_var"].data
    tensors["bn_mean"].data = bn_state.running_mean
    tensors["bn_var"].data = bn_state.running_var
    return ModelParams(config, tensors, bn_state), meta.get("extra", {})


def model_checksum(path) -> int:
    with open(path, "rb") as fh:
        return binio.crc32(fh.read())
