"""Comparison harness and figure exports.

CSV files are the canonical outputs (byte-stable, diffable); SVG renders
of the same numbers are best-effort via matplotlib.

Comparison arms per attack level: the undefended model, the AT-FGSM
hardened model, a directly fine-tuned model (no pruning), and the pruning
defense. All arms are evaluated on adversarial data generated against the
original model (the attacker targets the deployed network; defenses see
the same received samples).
"""

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import attack as atk
from . import defense as dfs
from . import model as mdl
from .explain import ShapTensor, heatmap

log = logging.getLogger(__name__)


@dataclass
class ComparisonRow:
    epsilon: float
    seed: int
    dataset_family: str
    original_adv: float
    at_fgsm_adv: float | None  # None when the AT arm was skipped
    direct_ft_adv: float
    shap_ft_adv: float
    clean_original: float
    clean_at_fgsm: float | None
    clean_direct_ft: float
    clean_shap_ft: float
    m: int
    policy: str

    def validate(self):
        for name in ("original_adv", "at_fgsm_adv", "direct_ft_adv", "shap_ft_adv",
                     "clean_original", "clean_at_fgsm", "clean_direct_ft", "clean_shap_ft"):
            v = getattr(self, name)
            if v is not None and not (0.0 <= v <= 1.0):
                raise ValueError(f"accuracy {name}={v} outside [0,1]")


@dataclass
class ComparisonReport:
    rows: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"rows": [vars(r) for r in self.rows]}

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path):
        cols = ["epsilon", "seed", "dataset_family", "original_adv", "at_fgsm_adv",
                "direct_ft_adv", "shap_ft_adv", "clean_original", "clean_at_fgsm",
                "clean_direct_ft", "clean_shap_ft", "m", "policy"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([getattr(r, c) for c in cols])


def run_comparison(
    params,
    tiny_train,
    tiny_test,
    adv_source,
    epsilons,
    schemes,
    train_cfg,
    fine_tune_cfg,
    explainer_samples=64,
    background_cap=5000,
    policy_threshold=dfs.DEFAULT_POLICY_THRESHOLD,
    seed=0,
    dataset_family="",
    include_at=True,
    progress=None,
) -> ComparisonReport:
    """All four arms at every attack level, sharing one base model."""
    report = ComparisonReport()
    clean_original = mdl.evaluate(params, adv_source, schemes).accuracy

    direct_ft, _ = dfs.fine_tune(params, tiny_train, fine_tune_cfg, schemes=schemes)
    clean_direct = mdl.evaluate(direct_ft, adv_source, schemes).accuracy

    for eps in epsilons:
        if progress:
            progress(f"epsilon={eps}")
        defense = dfs.shap_ft_pipeline(
            params, tiny_train, tiny_test, adv_source,
            epsilon=eps, schemes=schemes,
            explainer_samples=explainer_samples,
            background_cap=background_cap,
            fine_tune_cfg=fine_tune_cfg,
            policy_threshold=policy_threshold,
            seed=seed,
        )
        adv_data = defense["artifacts"]["adv_data"]
        points = defense["artifacts"]["points"]
        new_params = defense["artifacts"]["new_params"]
        de_clean = dfs.prune_dataset(adv_source, points)

        if include_at:
            hardened = mdl.init_params(params.config, seed=seed + 1)
            atk.adversarial_training(hardened, tiny_train, atk.AttackConfig(epsilon=eps),
                                     train_cfg, schemes=schemes)
            at_adv = mdl.evaluate(hardened, adv_data, schemes).accuracy
            at_clean = mdl.evaluate(hardened, adv_source, schemes).accuracy
        else:
            at_adv = None
            at_clean = None

        row = ComparisonRow(
            epsilon=eps,
            seed=seed,
            dataset_family=dataset_family,
            original_adv=defense["accuracies"]["original_adv_data"],
            at_fgsm_adv=at_adv,
            direct_ft_adv=mdl.evaluate(direct_ft, adv_data, schemes).accuracy,
            shap_ft_adv=defense["accuracies"]["defended_de_adv_data"],
            clean_original=clean_original,
            clean_at_fgsm=at_clean,
            clean_direct_ft=clean_direct,
            clean_shap_ft=mdl.evaluate(new_params, de_clean, schemes).accuracy,
            m=defense["m"],
            policy=defense["policy"],
        )
        row.validate()
        report.rows.append(row)
    return report


# ---------------------------------------------------------------------------
# figure exports (CSV canonical, SVG best-effort)


def _svg(fig, path):
    try:
        fig.savefig(path, format="svg")
    except Exception as exc:  # rendering is best-effort by contract
        log.warning("SVG export failed for %s: %s", path, exc)


def export_pointwise_sums(per_eps_scores: dict, path_csv, path_svg=None, scheme_names=None):
    """Per-timestep attribution-sum curves, one column per attack level."""
    eps_list = sorted(per_eps_scores)
    t_len = len(next(iter(per_eps_scores.values())))
    with open(path_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestep"] + [f"eps_{e}" for e in eps_list])
        for t in range(t_len):
            w.writerow([t] + [f"{per_eps_scores[e][t]:.8g}" for e in eps_list])
    if path_svg:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(8, 4))
        for e in eps_list:
            ax.plot(range(t_len), per_eps_scores[e], label=f"eps={e}", linewidth=1)
        ax.axhline(0.0, color="k", linewidth=0.5)
        ax.set_xlabel("feature sampling point")
        ax.set_ylabel("summed attribution")
        ax.legend()
        fig.tight_layout()
        _svg(fig, path_svg)
        plt.close(fig)


def _write_matrix_csv(matrix, path, scheme_names):
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + list(scheme_names))
        for i, row in enumerate(matrix):
            w.writerow([scheme_names[i]] + [f"{v:.8g}" for v in row])


def _matrix_svg(matrix, path, scheme_names, title):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(np.asarray(matrix, dtype=np.float64), cmap="viridis")
    ax.set_xticks(range(len(scheme_names)), scheme_names, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(len(scheme_names)), scheme_names, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    _svg(fig, path)
    plt.close(fig)


def export_heatmap_and_confusion(shap: ShapTensor, predictions, true_cls, confusion,
                                 out_prefix, scheme_names):
    """Attribution heatmap next to the confusion matrix (same frames)."""
    hm = heatmap(shap, predictions, true_cls)
    _write_matrix_csv(hm, f"{out_prefix}_heatmap.csv", scheme_names)
    _write_matrix_csv(confusion, f"{out_prefix}_confusion.csv", scheme_names)
    _matrix_svg(hm, f"{out_prefix}_heatmap.svg", scheme_names, "attribution heatmap")
    _matrix_svg(confusion, f"{out_prefix}_confusion.svg", scheme_names, "confusion matrix")
    return hm


def export_confusion_pair(conf_a, conf_b, labels, out_prefix, scheme_names):
    """Two confusion matrices for the small vs large attacked splits."""
    _write_matrix_csv(conf_a, f"{out_prefix}_{labels[0]}.csv", scheme_names)
    _write_matrix_csv(conf_b, f"{out_prefix}_{labels[1]}.csv", scheme_names)
    _matrix_svg(conf_a, f"{out_prefix}_{labels[0]}.svg", scheme_names, labels[0])
    _matrix_svg(conf_b, f"{out_prefix}_{labels[1]}.svg", scheme_names, labels[1])


def row_argmax_agreement(mat_a, mat_b) -> int:
    """How many rows agree on their argmax (ties broken by lowest index)."""
    a = np.asarray(mat_a)
    b = np.asarray(mat_b)
    return int(np.sum(np.argmax(a, axis=1) == np.argmax(b, axis=1)))
