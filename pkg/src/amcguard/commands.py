"""Subcommand implementations behind the CLI.

Artifact layout under <output_dir>/:
    data/<split>.amc controlled by synth
    model/base.amcm + model/history.json from train
    attacked/<split>_eps<e>.amc from attack
    shap/tiny_adv_eps<e>.amcs from explain
    defense/eps_<e>/ report.json, defended.amcm, de_tiny_train.amc,
        de_adv_data.amc from defend
    figures/ CSV + SVG exports
    compare/comparison.{json,csv}
    manifests/<command>*.json provenance records

Every manifest carries the master seed, the config hash, the dataset
family fingerprint and the CRC32 of each artifact written.
"""

import json
import os
import time
from pathlib import Path

import numpy as np

from . import attack as atk
from . import binio
from . import config as cfgmod
from . import defense as dfs
from . import explain as xp
from . import model as mdl
from . import report as rpt
from .dataset import dataset_family, load_dataset, make_split, save_dataset
from .errors import ProvenanceError
from .version import PRODUCER

SPLITS = ("tiny_train", "tiny_test", "adv_data")


def load_config(path) -> cfgmod.RunConfig:
    return cfgmod.from_file(path)


class Workspace:
    def __init__(self, cfg: cfgmod.RunConfig):
        self.cfg = cfg
        self.root = Path(cfg.output_dir)

    def path(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def split_path(self, split) -> Path:
        return self.path("data", f"{split}.amc")

    def model_path(self) -> Path:
        return self.path("model", "base.amcm")

    def attacked_path(self, split, eps) -> Path:
        return self.path("attacked", f"{split}_eps{eps:g}.amc")

    def shap_path(self, eps) -> Path:
        return self.path("shap", f"tiny_adv_eps{eps:g}.amcs")

    def defense_dir(self, eps) -> Path:
        d = self.root / "defense" / f"eps_{eps:g}"
        d.mkdir(parents=True, exist_ok=True)
        return d

    def family(self) -> str:
        return dataset_family(self.cfg.synth.describe())

    def manifest(self, name: str, inputs: dict, outputs: dict, extra: dict | None = None):
        rec = {
            "producer": PRODUCER,
            "command": name,
            "master_seed": self.cfg.master_seed,
            "config_hash": self.cfg.config_hash(),
            "dataset_family": self.family(),
            "inputs": {str(k): v for k, v in inputs.items()},
            "outputs": {str(k): _crc(v) for k, v in outputs.items()},
            "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        }
        if extra:
            rec.update(extra)
        p = self.path("manifests", f"{name}.json")
        with open(p, "w") as fh:
            json.dump(rec, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return rec

    def require(self, path: Path, producer: str) -> Path:
        if not Path(path).exists():
            raise FileNotFoundError(
                f"required artifact {path} is missing; run `amcguard {producer} --config ...` first"
            )
        return path


def _crc(path) -> int:
    with open(path, "rb") as fh:
        return binio.crc32(fh.read())


def _epsilons(cfg, args):
    if getattr(args, "epsilon", None) is not None:
        return [float(args.epsilon)]
    return list(cfg.attack.epsilons)


def _load_model_checked(ws: Workspace):
    params, extra = mdl.load_model(ws.require(ws.model_path(), "train"))
    if extra.get("dataset_family") not in (None, ws.family()):
        raise ProvenanceError(
            f"model {ws.model_path()} was trained on dataset family {extra.get('dataset_family')},"
            f" current config generates {ws.family()}"
        )
    return params, extra


# ---------------------------------------------------------------------------


def cmd_synth(cfg, args):
    ws = Workspace(cfg)
    outputs = {}
    for split in SPLITS:
        ds = make_split(cfg.synth, split)
        p = ws.split_path(split)
        save_dataset(ds, p)
        outputs[split] = p
        print(f"synth: {split}: {len(ds)} frames of length {ds.frame_len} -> {p}")
    ws.manifest("synth", {}, outputs)


def cmd_train(cfg, args):
    ws = Workspace(cfg)
    train_ds = load_dataset(ws.require(ws.split_path("tiny_train"), "synth"))
    params = mdl.init_params(cfg.model, seed=cfg.master_seed)
    hist = mdl.train(params, train_ds, cfg.train, schemes=cfg.schemes)
    extra = {
        "dataset_family": ws.family(),
        "schemes": [int(s) for s in cfg.schemes],
        "seed": cfg.master_seed,
        "config_hash": cfg.config_hash(),
    }
    mdl.save_model(params, ws.model_path(), extra=extra)
    hist_path = ws.path("model", "history.json")
    with open(hist_path, "w") as fh:
        json.dump(hist.to_dict(), fh, indent=2)
        fh.write("\n")
    final = {k: (v[-1] if v else None) for k, v in hist.to_dict().items() if isinstance(v, list)}
    print(f"train: {len(hist.train_loss)} epochs, final {final} -> {ws.model_path()}")
    ws.manifest("train", {"tiny_train": _crc(ws.split_path('tiny_train'))},
                {"model": ws.model_path(), "history": hist_path})


def cmd_attack(cfg, args):
    ws = Workspace(cfg)
    params, _ = _load_model_checked(ws)
    splits = ["tiny_test", "adv_data"] if args.split == "both" else [args.split]
    outputs = {}
    for eps in _epsilons(cfg, args):
        for split in splits:
            src = load_dataset(ws.require(ws.split_path(split), "synth"))
            out = atk.attack_dataset(params, src, atk.AttackConfig(epsilon=eps), schemes=cfg.schemes)
            p = ws.attacked_path(split, eps)
            save_dataset(out, p)
            outputs[f"{split}_eps{eps:g}"] = p
            print(f"attack: eps={eps:g} {split} -> {p}")
    ws.manifest("attack", {"model": _crc(ws.model_path())}, outputs)


def cmd_explain(cfg, args):
    ws = Workspace(cfg)
    params, _ = _load_model_checked(ws)
    train_ds = load_dataset(ws.require(ws.split_path("tiny_train"), "synth"))
    background = xp.make_background(train_ds, cap=cfg.explainer.background_cap, seed=cfg.master_seed)
    model_crc = _crc(ws.model_path())
    outputs = {}
    for eps in _epsilons(cfg, args):
        adv = load_dataset(ws.require(ws.attacked_path("tiny_test", eps), "attack"))
        ecfg = xp.ExplainerConfig(
            background=background, num_samples=cfg.explainer.num_samples, seed=cfg.master_seed
        )
        shap = xp.explain_dataset(xp.ClassifierLogits(params), adv, ecfg)
        shap.provenance["epsilon"] = eps
        shap.provenance["dataset_family"] = ws.family()
        p = ws.shap_path(eps)
        xp.save_shap(shap, p, model_checksum=model_crc)
        outputs[f"shap_eps{eps:g}"] = p
        print(f"explain: eps={eps:g} shape {shap.shape} -> {p}")
    ws.manifest("explain", {"model": model_crc}, outputs)


def cmd_defend(cfg, args):
    ws = Workspace(cfg)
    params, _ = _load_model_checked(ws)
    train_ds = load_dataset(ws.require(ws.split_path("tiny_train"), "synth"))
    model_crc = _crc(ws.model_path())
    for eps in _epsilons(cfg, args):
        tiny_adv = load_dataset(ws.require(ws.attacked_path("tiny_test", eps), "attack"))
        adv_data = load_dataset(ws.require(ws.attacked_path("adv_data", eps), "attack"))
        shap = xp.load_shap(ws.require(ws.shap_path(eps), "explain"))
        if shap.provenance.get("model_checksum") not in (0, model_crc):
            raise ProvenanceError(
                f"attribution file {ws.shap_path(eps)} was computed for a different model checkpoint"
            )
        report = defend_from_artifacts(cfg, params, train_ds, tiny_adv, adv_data, shap, eps)
        out_dir = ws.defense_dir(eps)
        arts = report.pop("artifacts")
        mdl.save_model(arts["new_params"], out_dir / "defended.amcm", extra={
            "dataset_family": ws.family(),
            "schemes": [int(s) for s in cfg.schemes],
            "pruned_m": report["m"],
            "epsilon": eps,
        })
        save_dataset(arts["de_tiny_train"], out_dir / "de_tiny_train.amc")
        save_dataset(arts["de_adv_data"], out_dir / "de_adv_data.amc")
        report["artifact_paths"] = {
            "defended_model": str(out_dir / "defended.amcm"),
            "de_tiny_train": str(out_dir / "de_tiny_train.amc"),
            "de_adv_data": str(out_dir / "de_adv_data.amc"),
        }
        report["seed"] = cfg.master_seed
        report["dataset_family"] = ws.family()
        with open(out_dir / "report.json", "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        accs = report["accuracies"]
        print(
            f"defend: eps={eps:g} policy={report['policy']} m={report['m']} "
            f"adv {accs['original_adv_data']:.3f} -> defended {accs['defended_de_adv_data']:.3f}"
        )
        ws.manifest(f"defend_eps{eps:g}", {"model": model_crc}, {
            "report": out_dir / "report.json",
            "defended_model": out_dir / "defended.amcm",
        })


def defend_from_artifacts(cfg, params, train_ds, tiny_adv, adv_data, shap, eps):
    """Defense stages C given precomputed attack/explain artifacts."""
    schemes = cfg.schemes
    pred_adv, _ = mdl.predict_batch(params, tiny_adv.samples)
    true_cls = mdl.class_indices(tiny_adv.labels, schemes)
    policy = dfs.policy_for_epsilon(eps, cfg.defense.policy_threshold)
    selected = dfs.select_samples(shap, pred_adv, true_cls, policy)
    if len(selected) == 0:
        points = dfs.NegativePointSet(np.array([], dtype=np.int64), policy, {"epsilon": eps})
        scores = np.zeros(tiny_adv.frame_len)
    else:
        scores = dfs.negative_point_scores(shap, selected, true_cls)
        points = dfs.negative_points(shap, selected, true_cls, policy, {"epsilon": eps})
    de_tiny_train = dfs.prune_dataset(train_ds, points)
    de_adv_data = dfs.prune_dataset(adv_data, points)
    ft_cfg = cfg.defense.fine_tune
    new_params, ft_hist = dfs.fine_tune(params, de_tiny_train, ft_cfg, schemes=schemes)
    adv_eval = mdl.evaluate(params, tiny_adv, schemes)
    undefended = mdl.evaluate(params, adv_data, schemes)
    defended = mdl.evaluate(new_params, de_adv_data, schemes)
    return {
        "epsilon": eps,
        "policy": policy,
        "m": points.m,
        "indices": points.indices.tolist(),
        "point_scores": [float(v) for v in scores],
        "selected_frames": int(len(selected)),
        "accuracies": {
            "original_tiny_adv": adv_eval.accuracy,
            "original_adv_data": undefended.accuracy,
            "defended_de_adv_data": defended.accuracy,
        },
        "confusions": {
            "original_tiny_adv": adv_eval.confusion.tolist(),
            "original_adv_data": undefended.confusion.tolist(),
            "defended_de_adv_data": defended.confusion.tolist(),
        },
        "fine_tune": {
            "epochs_run": len(ft_hist.train_loss) if ft_hist else 0,
            "stopped_epoch": ft_hist.stopped_epoch if ft_hist else None,
        },
        "artifacts": {
            "new_params": new_params,
            "de_tiny_train": de_tiny_train,
            "de_adv_data": de_adv_data,
            "points": points,
            "predictions_tiny_adv": pred_adv,
        },
    }


def cmd_evaluate(cfg, args):
    ws = Workspace(cfg)
    params, extra = mdl.load_model(ws.require(Path(args.model), "train"))
    ds = load_dataset(ws.require(Path(args.dataset), "synth"))
    model_family = extra.get("dataset_family")
    ds_generator = ds.metadata.get("generator")
    ds_family = dataset_family(ds_generator) if ds_generator else ds.metadata.get("dataset_family")
    if model_family and ds_family and model_family != ds_family:
        raise ProvenanceError(
            f"model dataset family {model_family} != dataset family {ds_family}; "
            "evaluate refuses mismatched artifacts"
        )
    schemes = extra.get("schemes") or [int(s) for s in cfg.schemes]
    res = mdl.evaluate(params, ds, schemes)
    out = {
        "model": str(args.model),
        "dataset": str(args.dataset),
        "accuracy": res.accuracy,
        "confusion": res.confusion.tolist(),
        "frames": len(ds),
    }
    p = ws.path("evaluate", f"eval_{Path(args.dataset).stem}.json")
    with open(p, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"evaluate: accuracy {res.accuracy:.4f} on {len(ds)} frames -> {p}")


def cmd_compare(cfg, args):
    ws = Workspace(cfg)
    params, _ = _load_model_checked(ws)
    train_ds = load_dataset(ws.require(ws.split_path("tiny_train"), "synth"))
    test_ds = load_dataset(ws.require(ws.split_path("tiny_test"), "synth"))
    adv_src = load_dataset(ws.require(ws.split_path("adv_data"), "synth"))
    report = rpt.run_comparison(
        params, train_ds, test_ds, adv_src,
        epsilons=cfg.attack.epsilons,
        schemes=cfg.schemes,
        train_cfg=cfg.train,
        fine_tune_cfg=cfg.defense.fine_tune,
        explainer_samples=cfg.explainer.num_samples,
        background_cap=cfg.explainer.background_cap,
        policy_threshold=cfg.defense.policy_threshold,
        seed=cfg.master_seed,
        dataset_family=ws.family(),
        include_at=True,
        progress=lambda msg: print(f"compare: {msg}"),
    )
    jpath = ws.path("compare", "comparison.json")
    cpath = ws.path("compare", "comparison.csv")
    report.write_json(jpath)
    report.write_csv(cpath)
    for row in report.rows:
        print(
            f"compare: eps={row.epsilon:g} original {row.original_adv:.3f} "
            f"AT-FGSM {row.at_fgsm_adv:.3f} direct-FT {row.direct_ft_adv:.3f} "
            f"defense {row.shap_ft_adv:.3f} (m={row.m}, {row.policy})"
        )
    ws.manifest("compare", {"model": _crc(ws.model_path())}, {"json": jpath, "csv": cpath})
    return report


def cmd_pipeline(cfg, args):
    ws = Workspace(cfg)
    cmd_synth(cfg, args)
    cmd_train(cfg, args)

    class _A:
        epsilon = None
        split = "both"

    cmd_attack(cfg, _A)
    cmd_explain(cfg, _A)
    cmd_defend(cfg, _A)
    export_figures(cfg)
    report = cmd_compare(cfg, args)
    print(f"pipeline: complete; comparison rows: {len(report.rows)}")


def export_figures(cfg):
    """CSV/SVG exports of the per-point attribution sums, the heatmap vs
    confusion pair at the lowest attack level, and the small/large split
    confusion pair; consumes defend artifacts."""
    ws = Workspace(cfg)
    scheme_names = [s.name for s in cfg.schemes]
    per_eps_scores = {}
    reports = {}
    for eps in cfg.attack.epsilons:
        rp = ws.defense_dir(eps) / "report.json"
        ws.require(rp, "defend")
        with open(rp) as fh:
            reports[eps] = json.load(fh)
        per_eps_scores[eps] = reports[eps]["point_scores"]
    rpt.export_pointwise_sums(
        per_eps_scores,
        ws.path("figures", "pointwise_sums.csv"),
        ws.path("figures", "pointwise_sums.svg"),
    )
    low = min(cfg.attack.epsilons)
    params, _ = _load_model_checked(ws)
    tiny_adv = load_dataset(ws.require(ws.attacked_path("tiny_test", low), "attack"))
    shap = xp.load_shap(ws.require(ws.shap_path(low), "explain"))
    pred, _ = mdl.predict_batch(params, tiny_adv.samples)
    true_cls = mdl.class_indices(tiny_adv.labels, cfg.schemes)
    conf = np.asarray(reports[low]["confusions"]["original_tiny_adv"])
    rpt.export_heatmap_and_confusion(
        shap, pred, true_cls, conf, str(ws.path("figures", f"eps{low:g}")), scheme_names
    )
    rpt.export_confusion_pair(
        np.asarray(reports[low]["confusions"]["original_tiny_adv"]),
        np.asarray(reports[low]["confusions"]["original_adv_data"]),
        ("tiny_adv", "adv_data"),
        str(ws.path("figures", f"confusion_pair_eps{low:g}")),
        scheme_names,
    )
    print(f"figures: wrote pointwise sums and matrix exports under {ws.path('figures')}")
