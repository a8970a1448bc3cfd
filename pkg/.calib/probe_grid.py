"""Probe desk SNR grids for low-epsilon m and defense gain."""
import dataclasses, json, sys, time
import numpy as np
from amcguard import config as cfgmod
from amcguard import model as mdl, attack as atk, defense as dfs
from amcguard.dataset import make_split

t0 = time.time()
lo = int(sys.argv[1])
cfg = cfgmod.from_file("configs/desk.json")
grid = tuple(range(lo, 20, 2))
synth = dataclasses.replace(cfg.synth, snr_grid=grid, master_seed=0)
print(f"grid {grid} ({len(grid)} points)", flush=True)
splits = {tag: make_split(synth, tag) for tag in ("tiny_train", "tiny_test", "adv_data")}
params = mdl.init_params(cfg.model, seed=0)
mdl.train(params, splits["tiny_train"], cfg.train, schemes=cfg.schemes)
clean = mdl.evaluate(params, splits["adv_data"], cfg.schemes).accuracy
print(f"[{time.time()-t0:.0f}s] clean adv_data acc {clean:.3f}", flush=True)
out = {"grid_lo": lo, "clean": clean, "eps": {}}
for eps in (0.025, 0.05, 0.1):
    rep = dfs.shap_ft_pipeline(
        params, splits["tiny_train"], splits["tiny_test"], splits["adv_data"],
        epsilon=eps, schemes=cfg.schemes,
        explainer_samples=cfg.explainer.num_samples,
        fine_tune_cfg=cfg.defense.fine_tune, seed=0,
    )
    a = rep["accuracies"]
    out["eps"][str(eps)] = {"m": rep["m"], "policy": rep["policy"],
                            "undef": a["original_adv_data"], "def": a["defended_de_adv_data"]}
    print(f"[{time.time()-t0:.0f}s] eps={eps}: m={rep['m']} {rep['policy']} "
          f"undef {a['original_adv_data']:.3f} -> def {a['defended_de_adv_data']:.3f}", flush=True)
json.dump(out, open(f".calib/grid{lo}.json", "w"), indent=2)
print("DONE", time.time()-t0)
