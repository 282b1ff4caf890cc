import sys, time
import numpy as np
from advca_lab import graphs as G, tensor as T
from advca_lab.engine import TrainConfig, AdamState, _mean_scalars
from advca_lab.models import Backbone
from advca_lab.graphs import GraphView
lo, hi, lr, ep = int(sys.argv[1]), int(sys.argv[2]), float(sys.argv[3]), int(sys.argv[4])
cfg = G.base_shift_config(100, 50, 50, total_nodes=(lo, hi))
data = G.generate_motif_dataset(cfg, seed=7)
split = G.split_covariate(data, "base")
tr = [GraphView.of(g) for g in split.train]; ytr = np.array([g.label for g in split.train])
va = [GraphView.of(g) for g in split.val]; yva = [g.label for g in split.val]
te = [GraphView.of(g) for g in split.test]; yte = [g.label for g in split.test]
by_class = [np.flatnonzero(ytr == c) for c in range(3)]
bb = Backbone(np.random.default_rng(0), 4, 128, 3)
params = list(bb.named_parameters("b"))
opt = AdamState(params)
rng = np.random.default_rng(0)
per = 11  # 33-graph class-balanced batches
t0 = time.monotonic()
best = (0, -1, None)
for epoch in range(ep):
    orders = [rng.permutation(ix) for ix in by_class]
    nb = min(len(o) for o in orders) // per
    for b in range(nb):
        idx = np.concatenate([o[b*per:(b+1)*per] for o in orders])
        for _, p in params: p.zero_grad()
        loss = _mean_scalars([T.softmax_cross_entropy(bb.logits(tr[i]), int(ytr[i])) for i in idx])
        loss.backward()
        opt.step(params, lr)
        for _, p in params: p.zero_grad()
    va_acc = float(np.mean([bb.predict_raw(v) == y for v, y in zip(va, yva)]))
    if va_acc > best[0]:
        best = (va_acc, epoch, {n: p.data.copy() for n, p in params})
    if epoch % 5 == 0:
        sample = rng.choice(len(tr), 240, replace=False)
        logits = np.stack([bb.logits_raw(tr[i]) for i in sample])
        sh = logits - logits.max(1, keepdims=True)
        ce = float(np.mean(np.log(np.exp(sh).sum(1)) - sh[np.arange(240), ytr[sample]]))
        tr_acc = float((logits.argmax(1) == ytr[sample]).mean())
        print(f"ep{epoch:3d} loss={ce:.4f} tr={tr_acc:.2f} va={va_acc:.2f}", flush=True)
for n, p in params: p.data = best[2][n]
test = float(np.mean([bb.predict_raw(v) == y for v, y in zip(te, yte)]))
print(f"DONE {time.monotonic()-t0:.0f}s best_va={best[0]:.3f}@{best[1]} test={test:.3f}", flush=True)
