"""Desk-scale calibration: train, attack sweep, defense at all epsilons."""
import json, sys, time
import numpy as np
from amcguard import config as cfgmod
from amcguard import model as mdl, attack as atk, defense as dfs, explain as xp
from amcguard.dataset import make_split

t_start = time.time()
cfg = cfgmod.from_file("configs/desk.json")
seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg.synth.master_seed = seed
cfg.train.seed = seed
cfg.defense.fine_tune.seed = seed

log = {"seed": seed}
def mark(name):
    print(f"[{time.time()-t_start:7.1f}s] {name}", flush=True)

splits = {tag: make_split(cfg.synth, tag) for tag in ("tiny_train", "tiny_test", "adv_data")}
mark("synth done")

params = mdl.init_params(cfg.model, seed=seed)
hist = mdl.train(params, splits["tiny_train"], cfg.train, schemes=cfg.schemes)
mark(f"train done: final train acc {hist.train_acc[-1]:.3f} val acc {hist.val_acc[-1]:.3f}")

clean_test = mdl.evaluate(params, splits["tiny_test"], cfg.schemes).accuracy
clean_adv_src = mdl.evaluate(params, splits["adv_data"], cfg.schemes).accuracy
log["clean_tiny_test"] = clean_test
log["clean_adv_data"] = clean_adv_src
mark(f"clean acc: tiny_test {clean_test:.3f}, adv_data {clean_adv_src:.3f}")

# attack sweep on adv_data
log["attack_sweep"] = {}
for eps in (0.0, 0.025, 0.05, 0.075, 0.1):
    attacked = atk.attack_dataset(params, splits["adv_data"], atk.AttackConfig(epsilon=eps), schemes=cfg.schemes)
    acc = mdl.evaluate(params, attacked, cfg.schemes).accuracy
    log["attack_sweep"][str(eps)] = acc
    mark(f"attack eps={eps}: adv_data acc {acc:.3f}")

# defense at each eps
log["defense"] = {}
for eps in cfg.attack.epsilons:
    rep = dfs.shap_ft_pipeline(
        params, splits["tiny_train"], splits["tiny_test"], splits["adv_data"],
        epsilon=eps, schemes=cfg.schemes,
        explainer_samples=cfg.explainer.num_samples,
        background_cap=cfg.explainer.background_cap,
        fine_tune_cfg=cfg.defense.fine_tune,
        policy_threshold=cfg.defense.policy_threshold,
        seed=seed,
    )
    rep.pop("artifacts")
    scores = rep.pop("point_scores")
    rep["neg_score_count"] = int(sum(1 for s in scores if s < 0))
    log["defense"][str(eps)] = rep
    a = rep["accuracies"]
    mark(f"defense eps={eps}: m={rep['m']} policy={rep['policy']} ft_epochs={rep['fine_tune']['epochs_run']} "
         f"undefended {a['original_adv_data']:.3f} defended {a['defended_de_adv_data']:.3f}")

# direct fine-tune arm at eps=0.1
direct, _ = dfs.fine_tune(params, splits["tiny_train"], cfg.defense.fine_tune, schemes=cfg.schemes)
attacked = atk.attack_dataset(params, splits["adv_data"], atk.AttackConfig(epsilon=0.1), schemes=cfg.schemes)
log["direct_ft_adv_0.1"] = mdl.evaluate(direct, attacked, cfg.schemes).accuracy
mark(f"direct FT at 0.1: {log['direct_ft_adv_0.1']:.3f}")
log["total_seconds"] = time.time() - t_start

with open(f".calib/seed{seed}.json", "w") as fh:
    json.dump(log, fh, indent=2)
print("WROTE", f".calib/seed{seed}.json")
