"""Negative-point pruning defense with fine-tuning.

Stages: attack the small test split, explain it, find the timesteps whose
summed true-class attribution over the selected frames is negative, delete
those timesteps from both the clean training split and the attacked
evaluation split, then fine-tune the classifier (conv/LSTM/batchnorm
weights kept, fc1 re-initialized narrower) on the pruned training data and
classify the pruned attacked data.

Sample-selection policy: at low attack levels every frame contributes to
the negative-point scores (errors are too few and pruning error-only
points would hurt correct frames); at high levels only the misclassified
frames do.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import attack as atk
from . import explain as xp
from . import model as mdl
from .errors import ContractError
from .explain import ShapTensor

log = logging.getLogger(__name__)

POLICY_ERRORS_ONLY = "errors_only"
POLICY_ALL_SAMPLES = "all_samples"
DEFAULT_POLICY_THRESHOLD = 0.06  # epsilon below this uses all_samples


@dataclass
class NegativePointSet:
    indices: np.ndarray  # strictly increasing timestep indices
    policy: str
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if len(self.indices) and (
            np.any(np.diff(self.indices) <= 0) or self.indices.min() < 0
        ):
            raise ContractError("negative-point indices must be strictly increasing and >= 0")

    @property
    def m(self) -> int:
        return int(len(self.indices))

    def to_dict(self) -> dict:
        return {"indices": self.indices.tolist(), "m": self.m, "policy": self.policy, "source": self.source}


@dataclass
class FineTuneConfig:
    epochs: int = 50
    batch_size: int = 20
    fc1_units: int = 128
    patience: int = 5
    monitor: str = "val_loss"
    learning_rate: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.fc1_units < 1 or self.patience < 1:
            raise ContractError("FineTuneConfig counts must be positive")


def policy_for_epsilon(epsilon: float, threshold: float = DEFAULT_POLICY_THRESHOLD) -> str:
    return POLICY_ALL_SAMPLES if epsilon < threshold else POLICY_ERRORS_ONLY


def select_samples(shap: ShapTensor, predictions, true_labels, policy: str) -> np.ndarray:
    """Frame indices contributing to negative-point scores."""
    predictions = np.asarray(predictions)
    true_labels = np.asarray(true_labels)
    n = shap.values.shape[0]
    if len(predictions) != n or len(true_labels) != n:
        raise ContractError("predictions/true_labels length does not match ShapTensor")
    if policy == POLICY_ALL_SAMPLES:
        return np.arange(n)
    if policy == POLICY_ERRORS_ONLY:
        return np.flatnonzero(predictions != true_labels)
    raise ContractError(f"unknown policy {policy!r}")


def negative_point_scores(shap: ShapTensor, selected, true_class_indices) -> np.ndarray:
    """Per-timestep sums of true-class attributions over selected frames."""
    selected = np.asarray(selected)
    if len(selected) == 0:
        raise ContractError("no samples selected for negative-point extraction")
    cls = np.asarray(true_class_indices)
    vals = shap.values[selected]  # [S, T, 2, C]
    picked = vals[np.arange(len(selected)), :, :, cls[selected]]  # [S, T, 2]
    return picked.sum(axis=(0, 2)).astype(np.float64)


def negative_points(
    shap: ShapTensor, selected, true_class_indices, policy: str, source: dict | None = None
) -> NegativePointSet:
    scores = negative_point_scores(shap, selected, true_class_indices)
    idx = np.flatnonzero(scores < 0)
    return NegativePointSet(idx, policy, dict(source or {}, scores_min=float(scores.min())))


def prune_frames(samples: np.ndarray, points: NegativePointSet) -> np.ndarray:
    t_len = samples.shape[1]
    if points.m and points.indices.max() >= t_len:
        raise ContractError(
            f"negative-point index {int(points.indices.max())} out of range for length {t_len}"
        )
    return np.delete(samples, points.indices, axis=1)


def prune_dataset(dataset, points: NegativePointSet):
    """Remove the marked timesteps from every frame; labels/SNR untouched."""
    pruned = prune_frames(dataset.samples, points)
    return dataset.replace(samples=pruned, pruned_m=points.m, pruned_indices=points.indices.tolist())


def fine_tune(params: mdl.ModelParams, pruned_train, cfg: FineTuneConfig, schemes=None):
    """New model: conv/LSTM/batchnorm from `params`, fc1/fc2 re-initialized
    at the fine-tune width, trained with early stopping on validation loss."""
    old = params.config
    new_config = mdl.ModelConfig(
        conv_kernels=old.conv_kernels,
        conv_width=old.conv_width,
        lstm_units=old.lstm_units,
        fc1_units=cfg.fc1_units,
        num_classes=old.num_classes,
    )
    new_params = mdl.init_params(new_config, seed=cfg.seed)
    for name in ("conv_w", "conv_b", "lstm_wx", "lstm_wh", "lstm_b", "bn_gamma", "bn_beta"):
        new_params.tensors[name].data[...] = params.tensors[name].data
    new_params.bn_state.running_mean[:] = params.bn_state.running_mean
    new_params.bn_state.running_var[:] = params.bn_state.running_var
    history = None
    if cfg.epochs > 0:
        train_cfg = mdl.TrainConfig(
            learning_rate=cfg.learning_rate,
            batch_size=cfg.batch_size,
            epochs=cfg.epochs,
            early_stopping=mdl.EarlyStopConfig(enabled=True, patience=cfg.patience, monitor=cfg.monitor),
            seed=cfg.seed,
        )
        history = mdl.train(new_params, pruned_train, train_cfg, schemes=schemes)
    return new_params, history


def shap_ft_pipeline(
    params: mdl.ModelParams,
    tiny_train,
    tiny_test,
    adv_source,
    epsilon: float,
    schemes=None,
    explainer_samples: int = 256,
    background_cap: int = xp.BACKGROUND_CAP,
    fine_tune_cfg: FineTuneConfig | None = None,
    policy: str | None = None,
    policy_threshold: float = DEFAULT_POLICY_THRESHOLD,
    seed: int = 0,
    progress=None,
) -> dict:
    """End-to-end defense; returns a report dict with all artifacts.

    Report keys: epsilon, policy, m, indices, accuracies per stage,
    confusion matrices, plus the artifacts themselves under "artifacts".
    """
    schemes = list(schemes) if schemes is not None else list(range(params.config.num_classes))
    ft_cfg = fine_tune_cfg or FineTuneConfig(seed=seed)
    attack_cfg = atk.AttackConfig(epsilon=epsilon)

    # stage A: adversarial samples for the small test split and the
    # realistic evaluation split
    tiny_adv = atk.attack_dataset(params, tiny_test, attack_cfg, schemes=schemes)
    adv_data = atk.attack_dataset(params, adv_source, attack_cfg, schemes=schemes)

    # stage B: explain the attacked small split against a clean background
    background = xp.make_background(tiny_train, cap=background_cap, seed=seed)
    explainer_cfg = xp.ExplainerConfig(background=background, num_samples=explainer_samples, seed=seed)
    score_model = xp.ClassifierLogits(params)
    shap = xp.explain_dataset(score_model, tiny_adv, explainer_cfg, progress=progress)

    pred_adv, _ = mdl.predict_batch(params, tiny_adv.samples)
    true_cls = mdl.class_indices(tiny_adv.labels, schemes)
    chosen_policy = policy or policy_for_epsilon(epsilon, policy_threshold)
    selected = select_samples(shap, pred_adv, true_cls, chosen_policy)
    if len(selected) == 0:
        log.warning("policy %s selected no frames at eps=%s; degenerate defense (m=0)", chosen_policy, epsilon)
        points = NegativePointSet(np.array([], dtype=np.int64), chosen_policy, {"epsilon": epsilon})
        scores = np.zeros(tiny_adv.frame_len)
    else:
        scores = negative_point_scores(shap, selected, true_cls)
        points = negative_points(shap, selected, true_cls, chosen_policy, {"epsilon": epsilon})
    if points.m == 0:
        log.warning("no negative points found at eps=%s; fine-tuning on unpruned data", epsilon)

    # stage C: prune both splits, fine-tune, classify
    de_tiny_train = prune_dataset(tiny_train, points)
    de_adv_data = prune_dataset(adv_data, points)
    new_params, ft_history = fine_tune(params, de_tiny_train, ft_cfg, schemes=schemes)

    clean_test = mdl.evaluate(params, tiny_test, schemes)
    adv_test = mdl.evaluate(params, tiny_adv, schemes)
    undefended = mdl.evaluate(params, adv_data, schemes)
    defended = mdl.evaluate(new_params, de_adv_data, schemes)

    report = {
        "epsilon": epsilon,
        "policy": chosen_policy,
        "m": points.m,
        "indices": points.indices.tolist(),
        "point_scores": [float(v) for v in scores],
        "selected_frames": int(len(selected)),
        "accuracies": {
            "original_clean_tiny_test": clean_test.accuracy,
            "original_tiny_adv": adv_test.accuracy,
            "original_adv_data": undefended.accuracy,
            "defended_de_adv_data": defended.accuracy,
        },
        "confusions": {
            "original_tiny_adv": adv_test.confusion.tolist(),
            "original_adv_data": undefended.confusion.tolist(),
            "defended_de_adv_data": defended.confusion.tolist(),
        },
        "fine_tune": {
            "epochs_run": len(ft_history.train_loss) if ft_history else 0,
            "stopped_epoch": ft_history.stopped_epoch if ft_history else None,
        },
        "artifacts": {
            "tiny_adv": tiny_adv,
            "adv_data": adv_data,
            "shap": shap,
            "points": points,
            "de_tiny_train": de_tiny_train,
            "de_adv_data": de_adv_data,
            "new_params": new_params,
            "predictions_tiny_adv": pred_adv,
        },
    }
    return report
