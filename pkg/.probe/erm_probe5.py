import sys, time
import numpy as np
from advca_lab import graphs as G
from advca_lab.engine import TrainConfig, erm_train
from advca_lab.models import Backbone
from advca_lab.graphs import GraphView
lo, hi, lr, ep = int(sys.argv[1]), int(sys.argv[2]), float(sys.argv[3]), int(sys.argv[4])
cfg = G.base_shift_config(100, 50, 50, total_nodes=(lo, hi))
data = G.generate_motif_dataset(cfg, seed=7)
split = G.split_covariate(data, "base")
tc = TrainConfig(epochs=ep, batch_size=32, seed=0, adam=True, lr=lr)
bb = Backbone(np.random.default_rng(0), 4, 128, 3)
t0 = time.monotonic()
res = erm_train(bb, split, tc)
dt = time.monotonic()-t0
test = sum(1 for g in split.test if bb.predict_raw(GraphView.of(g)) == g.label)/len(split.test)
trl = [r['loss'] for r in res.history if r['split']=='train']
tra = [r['accuracy'] for r in res.history if r['split']=='train']
vals = [r['accuracy'] for r in res.history if r['split']=='val']
k = max(1, len(trl)//14)
print(f"sizes=({lo},{hi}) lr={lr} ep={ep}: {dt:.0f}s best={res.best_val_accuracy:.2f}@{res.best_epoch} test={test:.3f}", flush=True)
print("  train_loss:", [f"{v:.3f}" for v in trl[::k]], flush=True)
print("  train_acc :", [f"{v:.2f}" for v in tra[::k]], flush=True)
print("  val_acc   :", [f"{v:.2f}" for v in vals[::k]], flush=True)
