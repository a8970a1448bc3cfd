"""FGSM adversarial sample generation and the AT-FGSM training baseline.

The perturbation is epsilon * sign(d loss / d input), computed with the
true label (untargeted) against the inference-mode model; sign(0) is 0,
so every element of the perturbation is exactly -eps, 0 or +eps.
"""

from dataclasses import dataclass

import numpy as np

from . import model as mdl
from . import tensor as T
from .errors import ContractError, NumericalError


@dataclass
class AttackConfig:
    epsilon: float
    targeted: bool = False  # kept for the wire format; only untargeted exists

    def __post_init__(self):
        if self.epsilon < 0:
            raise ContractError("epsilon must be >= 0")
        if self.targeted:
            raise ContractError("targeted FGSM is not part of this workbench")


def input_gradient_batch(params, frames, class_idx) -> np.ndarray:
    """d CE / d input for a batch [B,T,2] with class indices [B]."""
    frames = np.asarray(frames, dtype=params.conv_w.dtype)
    x = T.Tensor(frames, dtype=frames.dtype)
    with T.GradientTape() as tape:
        tape.watch(x)
        logits = mdl.forward_logits(params, x, training=False)
        probs = T.softmax(logits)
        # sum (not mean) keeps per-sample gradients unscaled by batch size
        loss = T.scale(T.categorical_crossentropy(probs, class_idx), float(len(frames)))
    g = tape.gradient(loss, x)
    if not np.all(np.isfinite(g.data)):
        bad = tape.first_nonfinite_op()
        raise NumericalError(
            f"non-finite input gradient; first offending layer: {bad or 'gradient accumulation'}"
        )
    return g.data


def input_gradient(params, frame, label, schemes=None) -> np.ndarray:
    """Gradient of the loss w.r.t. one frame [T,2]; label is a scheme id."""
    schemes = list(schemes) if schemes is not None else list(range(params.config.num_classes))
    cls = mdl.class_indices([int(label)], schemes)
    return input_gradient_batch(params, np.asarray(frame)[None], cls)[0]


def fgsm_batch(params, frames, class_idx, cfg: AttackConfig) -> np.ndarray:
    frames = np.asarray(frames, dtype=params.conv_w.dtype)
    if cfg.epsilon == 0.0:
        return frames.copy()
    g = input_gradient_batch(params, frames, class_idx)
    return frames + frames.dtype.type(cfg.epsilon) * np.sign(g)


def fgsm(params, frame, label, cfg: AttackConfig, schemes=None) -> np.ndarray:
    """Adversarial version of one frame; label is the true scheme id."""
    schemes = list(schemes) if schemes is not None else list(range(params.config.num_classes))
    cls = mdl.class_indices([int(label)], schemes)
    return fgsm_batch(params, np.asarray(frame)[None], cls, cfg)[0]


def attack_dataset(params, dataset, cfg: AttackConfig, schemes=None, batch_size: int = 200):
    """Per-frame FGSM with true labels; labels and SNR tags preserved."""
    schemes = list(schemes) if schemes is not None else list(range(params.config.num_classes))
    y = mdl.class_indices(dataset.labels, schemes)
    out = np.empty_like(dataset.samples)
    for i in range(0, len(dataset), batch_size):
        out[i : i + batch_size] = fgsm_batch(
            params, dataset.samples[i : i + batch_size], y[i : i + batch_size], cfg
        )
    return dataset.replace(
        samples=out, epsilon=cfg.epsilon, source_split=dataset.split_tag, attacked=True
    )


def adversarial_training(params, dataset, cfg: AttackConfig, train_cfg, schemes=None):
    """AT-FGSM baseline: every batch is a 50/50 clean/adversarial mix.

    epsilon=0 reduces to ordinary training exactly (the perturbation is
    identically zero, so the mix would only duplicate each batch).
    """
    schemes = list(schemes) if schemes is not None else list(range(params.config.num_classes))

    def attack_fn(p, xb, yb):
        return fgsm_batch(p, xb, yb, cfg)

    history = mdl.train(
        params,
        dataset,
        train_cfg,
        schemes=schemes,
        attack_fn=attack_fn if cfg.epsilon > 0 else None,
    )
    return params, history
