import sys, time
import numpy as np
from advca_lab import graphs as G
from advca_lab.engine import TrainConfig, erm_train
from advca_lab.models import Backbone
from advca_lab.graphs import GraphView
cfg = G.base_shift_config(100, 50, 50, total_nodes=(10, 14))
data = G.generate_motif_dataset(cfg, seed=7)
split = G.split_covariate(data, "base")
def run(tag, adam, lr, epochs, hidden=128, seed=0):
    tc = TrainConfig(epochs=epochs, batch_size=32, seed=seed, adam=adam, lr=lr)
    bb = Backbone(np.random.default_rng(seed), 4, hidden, 3)
    t0 = time.monotonic()
    res = erm_train(bb, split, tc)
    dt = time.monotonic()-t0
    test = sum(1 for g in split.test if bb.predict_raw(GraphView.of(g)) == g.label)/len(split.test)
    vals = [r['accuracy'] for r in res.history if r['split']=='val']
    trl = [r['loss'] for r in res.history if r['split']=='train']
    tra = [r['accuracy'] for r in res.history if r['split']=='train']
    k = max(1, len(vals)//14)
    print(f"{tag}: {dt:.0f}s best={res.best_val_accuracy:.2f}@{res.best_epoch} test={test:.3f}", flush=True)
    print("  train_loss:", [f"{v:.3f}" for v in trl[::k]], flush=True)
    print("  train_acc :", [f"{v:.2f}" for v in tra[::k]], flush=True)
    print("  val_acc   :", [f"{v:.2f}" for v in vals[::k]], flush=True)
run(sys.argv[1], sys.argv[2]=="adam", float(sys.argv[3]), int(sys.argv[4]))
