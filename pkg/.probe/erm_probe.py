import sys, time
import numpy as np
from advca_lab import graphs as G
from advca_lab.engine import TrainConfig, erm_train
from advca_lab.models import Backbone
from advca_lab.graphs import GraphView
hidden, epochs = int(sys.argv[1]), int(sys.argv[2])
cfg = G.base_shift_config(100, 50, 50, total_nodes=(10, 14))
data = G.generate_motif_dataset(cfg, seed=7)
split = G.split_covariate(data, "base")
for s in (0, 1, 2):
    tc = TrainConfig(epochs=epochs, batch_size=32, seed=s, adam=True, lr=3e-3)
    bb = Backbone(np.random.default_rng(s), 4, hidden, 3)
    t0 = time.monotonic()
    res = erm_train(bb, split, tc)
    dt = time.monotonic()-t0
    test = sum(1 for g in split.test if bb.predict_raw(GraphView.of(g)) == g.label)/len(split.test)
    vals = [r['accuracy'] for r in res.history if r['split']=='val']
    print(f"seed={s} hidden={hidden}: {dt:.0f}s best={res.best_val_accuracy:.2f}@{res.best_epoch} test={test:.3f} val_curve={[f'{v:.2f}' for v in vals[::5]]}", flush=True)
