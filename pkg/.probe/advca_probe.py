import sys, time
import numpy as np
from advca_lab import graphs as G
from advca_lab.engine import ModelBundle, ModelSizes, TrainConfig, train, mask_separation
from advca_lab.graphs import GraphView

seed = int(sys.argv[1]); epochs = int(sys.argv[2]); lr = float(sys.argv[3])
cfg = G.base_shift_config(100, 50, 50, total_nodes=(10, 14))
data = G.generate_motif_dataset(cfg, seed=7)
split = G.split_covariate(data, "base")
tc = TrainConfig(epochs=epochs, batch_size=32, seed=seed, adam=True, lr=lr, adv_lr=1e-3)
sizes = ModelSizes(hidden=128, layers=3, mask_hidden=64, mask_layers=2)
bundle = ModelBundle(seed, 4, sizes=sizes)
t0 = time.monotonic()
res = train(bundle, split, tc, variant="advca", eval_train=False)
dt = time.monotonic() - t0
test = sum(1 for g in split.test if bundle.predict(g) == g.label)/len(split.test)
sep = mask_separation(bundle, split.train[:200])
vals = [r['accuracy'] for r in res.history if r['split']=='val']
print(f"seed={seed} ep={epochs} lr={lr}: {dt:.0f}s val@best={res.best_val_accuracy:.3f}@{res.best_epoch} test={test:.3f} sep={sep:.3f}")
print("  val tail:", [f"{v:.2f}" for v in vals[-12:]])
