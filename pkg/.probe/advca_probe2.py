import sys, time
import numpy as np
from advca_lab import graphs as G
from advca_lab.engine import ModelBundle, ModelSizes, TrainConfig, train, mask_separation
seed, epochs, lr, bs, lam = int(sys.argv[1]), int(sys.argv[2]), float(sys.argv[3]), int(sys.argv[4]), float(sys.argv[5])
cfg = G.base_shift_config(100, 50, 50, total_nodes=(10, 14))
data = G.generate_motif_dataset(cfg, seed=7)
split = G.split_covariate(data, "base")
tc = TrainConfig(epochs=epochs, batch_size=bs, seed=seed, adam=True, lr=lr, adv_lr=1e-3, causal_ratio=lam)
bundle = ModelBundle(seed, 4, sizes=ModelSizes(hidden=128, layers=3, mask_hidden=64, mask_layers=2))
t0 = time.monotonic()
res = train(bundle, split, tc, variant="advca", eval_train=False)
dt = time.monotonic() - t0
test = sum(1 for g in split.test if bundle.predict(g) == g.label)/len(split.test)
sep = mask_separation(bundle, split.train[:200])
vals = [r['accuracy'] for r in res.history if r['split']=='val']
mc = [r['mean_cau_mask_causal_nodes'] for r in res.history if r['split']=='train']
me = [r['mean_cau_mask_env_nodes'] for r in res.history if r['split']=='train']
print(f"seed={seed} ep={epochs} lr={lr} bs={bs} lam={lam}: {dt:.0f}s best={res.best_val_accuracy:.3f}@{res.best_epoch} test={test:.3f} sep={sep:.3f}")
print("  val tail:", [f"{v:.2f}" for v in vals[-10:]])
print("  mask cau/env tail:", [f"{c:.2f}/{e:.2f}" for c,e in zip(mc[-6:], me[-6:])])
