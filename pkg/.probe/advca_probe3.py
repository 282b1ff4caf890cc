import sys, time
import numpy as np
from advca_lab import graphs as G
from advca_lab.engine import ModelBundle, ModelSizes, TrainConfig, train, mask_separation
seed, ep, lr, bs = int(sys.argv[1]), int(sys.argv[2]), float(sys.argv[3]), int(sys.argv[4])
cfg = G.base_shift_config(100, 50, 50, total_nodes=(10, 12))
data = G.generate_motif_dataset(cfg, seed=7)
split = G.split_covariate(data, "base")
tc = TrainConfig(epochs=ep, batch_size=bs, seed=seed, adam=True, lr=lr, adv_lr=1e-3)
bundle = ModelBundle(seed, 4, sizes=ModelSizes(hidden=128, layers=3, mask_hidden=64, mask_layers=2))
t0 = time.monotonic()
res = train(bundle, split, tc, variant="advca", eval_train=True)
dt = time.monotonic() - t0
test = sum(1 for g in split.test if bundle.predict(g) == g.label)/len(split.test)
sep = mask_separation(bundle, split.train[:200])
vals = [r['accuracy'] for r in res.history if r['split']=='val']
trl = [r['loss'] for r in res.history if r['split']=='train']
mc = [r['mean_cau_mask_causal_nodes'] for r in res.history if r['split']=='train']
me = [r['mean_cau_mask_env_nodes'] for r in res.history if r['split']=='train']
k = max(1, len(vals)//15)
print(f"seed={seed} ep={ep} lr={lr} bs={bs}: {dt:.0f}s best={res.best_val_accuracy:.3f}@{res.best_epoch} test={test:.3f} sep={sep:.3f}")
print("  train_loss:", [f"{v:.3f}" for v in trl[::k]])
print("  val_acc   :", [f"{v:.2f}" for v in vals[::k]])
print("  mask c/e  :", [f"{c:.2f}/{e:.2f}" for c,e in zip(mc[::k], me[::k])])
