"""Covariate-shift estimation between two graph sets.

A small binary GIN is trained to tell the two sets apart (with per-batch
balanced sampling), its encoder embeds every graph, and the embeddings are
standardized and projected onto a few principal components. Gaussian
kernel densities fitted on the union and on the two parts feed an
importance-sampled Monte Carlo integral of half the absolute density
difference over the low-overlap region, which yields a number in [0, 1]:
0 for indistinguishable sets, 1 for disjoint ones.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .engine import AdamState, _mean_scalars, sgd_step
from .errors import TrainingDivergedError
from .graphs import Graph, GraphView
from .models import Backbone, MaskPair
from .tensor import Tensor

_DENSITY_CHUNK = 2048


@dataclass
class GcsConfig:
    """Knobs of the shift estimator: Monte Carlo volume, density threshold
    (None picks 1e-4 of the peak fitted density), KDE feature dimension,
    and the domain-classifier training settings."""

    mc_samples: int = 10_000
    epsilon: float | None = None
    feature_dim: int = 4
    classifier_hidden: int = 32
    classifier_layers: int = 2
    epochs: int = 20
    batch_size: int = 64
    lr: float = 3e-3
    holdout_fraction: float = 0.2
    adam: bool = True
    seed: int = 0


@dataclass
class GcsReport:
    gcs: float
    mc_samples: int
    epsilon: float
    feature_dim: int
    accepted_fraction: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "gcs": self.gcs,
                "M": self.mc_samples,
                "epsilon": self.epsilon,
                "feature_dim": self.feature_dim,
                "accepted_fraction": self.accepted_fraction,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "GcsReport":
        d = json.loads(text)
        return cls(d["gcs"], d["M"], d["epsilon"], d["feature_dim"], d["accepted_fraction"])


@dataclass
class AugmentedGraph:
    """A graph together with the constant soft masks an augmentation chose."""

    graph: Graph
    node_mask: np.ndarray | None = None  # (n, 1)
    edge_mask: np.ndarray | None = None  # (n, n)


def _as_item(x) -> tuple[GraphView, np.ndarray | None, np.ndarray | None]:
    if isinstance(x, AugmentedGraph):
        return GraphView.of(x.graph), x.node_mask, x.edge_mask
    return GraphView.of(x), None, None


# ---------------------------------------------------------------------------
# Domain classifier


class _Cycler:
    """Deterministic endless stream over shuffled indices."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.pool = rng.permutation(n)
        self.pos = 0

    def take(self, k: int) -> list[int]:
        out = []
        while len(out) < k:
            if self.pos >= self.n:
                self.pool = self.rng.permutation(self.n)
                self.pos = 0
            out.append(int(self.pool[self.pos]))
            self.pos += 1
        return out


def train_domain_classifier(set_a, set_b, config: GcsConfig):
    """Train a binary GIN to separate the two sets; returns (encoder, info).

    Labels: set_a -> 0, set_b -> 1. Every batch draws the same number of
    graphs from each set so unequal set sizes cannot skew the classifier.
    ``info`` reports the held-out domain accuracy.
    """
    if not set_a or not set_b:
        raise ValueError("both graph sets must be nonempty")
    items_a = [_as_item(g) for g in set_a]
    items_b = [_as_item(g) for g in set_b]
    feature_dim = items_a[0][0].features.shape[1]
    rng = np.random.default_rng(config.seed)
    backbone = Backbone(rng, feature_dim, config.classifier_hidden, config.classifier_layers, num_classes=2)
    params = list(backbone.named_parameters("domain"))
    optimizer = AdamState(params) if config.adam else None

    def hold_split(items):
        k = max(1, int(round(len(items) * (1 - config.holdout_fraction)))) if len(items) > 1 else 1
        perm = rng.permutation(len(items))
        return [items[i] for i in perm[:k]], [items[i] for i in perm[k:]]

    train_a, hold_a = hold_split(items_a)
    train_b, hold_b = hold_split(items_b)
    half = max(1, config.batch_size // 2)
    steps = max(1, int(np.ceil(max(len(train_a), len(train_b)) / half)))
    cyc_a = _Cycler(len(train_a), np.random.default_rng(rng.integers(0, 2**63)))
    cyc_b = _Cycler(len(train_b), np.random.default_rng(rng.integers(0, 2**63)))

    for epoch in range(config.epochs):
        for step in range(steps):
            batch = [(train_a[i], 0) for i in cyc_a.take(half)]
            batch += [(train_b[i], 1) for i in cyc_b.take(half)]
            for _, p in params:
                p.zero_grad()
            terms = []
            for (view, node_mask, edge_mask), y in batch:
                mask = None
                if node_mask is not None or edge_mask is not None:
                    n = view.num_nodes
                    mask = MaskPair(
                        Tensor(node_mask if node_mask is not None else np.ones((n, 1), np.float32)),
                        Tensor(edge_mask if edge_mask is not None else view.adjacency),
                        Tensor(np.ones((view.num_edges, 1), np.float32)),
                    )
                terms.append(T.softmax_cross_entropy(backbone.logits(view, mask), y))
            loss = _mean_scalars(terms)
            if not np.isfinite(loss.item()):
                raise TrainingDivergedError(f"domain classifier diverged at epoch {epoch}, step {step}")
            loss.backward()
            if optimizer is not None:
                optimizer.step(params, config.lr)
            else:
                sgd_step(params, config.lr)
            for _, p in params:
                p.zero_grad()

    held = [(item, 0) for item in hold_a] + [(item, 1) for item in hold_b]
    if held:
        correct = sum(
            1
            for (view, nm, em), y in held
            if backbone.predict_raw(view, nm, em) == y
        )
        accuracy = correct / len(held)
    else:
        accuracy = float("nan")
    return backbone.encoder, {"holdout_accuracy": accuracy, "holdout_size": len(held)}


def extract_and_standardize(encoder, set_a, set_b, feature_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Embed both sets, standardize on the union, project to few dimensions.

    Scaling statistics and the principal directions both come from the
    union; dimensions with (numerically) zero variance are dropped with a
    warning before scaling. Returns the two parts of the projected union.
    """
    items_a = [_as_item(g) for g in set_a]
    items_b = [_as_item(g) for g in set_b]
    embed = lambda item: encoder.encode_raw(item[0], item[1], item[2])[1]
    f_a = np.stack([embed(it) for it in items_a]).astype(np.float64)
    f_b = np.stack([embed(it) for it in items_b]).astype(np.float64)
    union = np.vstack([f_a, f_b])
    mean = union.mean(axis=0)
    std = union.std(axis=0)
    keep = std > 1e-12
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} zero-variance embedding dimensions")
        union = union[:, keep]
        mean, std = mean[keep], std[keep]
    union = (union - mean) / std
    d = union.shape[1]
    if feature_dim < d:
        # principal-component projection fit on the standardized union
        _, _, vt = np.linalg.svd(union, full_matrices=False)
        comps = vt[:feature_dim]
        signs = np.sign(comps[np.arange(feature_dim), np.argmax(np.abs(comps), axis=1)])
        comps = comps * signs[:, None]
        union = union @ comps.T
    return union[: len(items_a)], union[len(items_a) :]


# ---------------------------------------------------------------------------
# Kernel density estimation


class KdeModel:
    """Product-form Gaussian kernel density over a finite support set."""

    def __init__(self, support: np.ndarray, bandwidth: np.ndarray):
        self.support = support
        self.bandwidth = bandwidth
        self._log_norm = -np.log(bandwidth * np.sqrt(2.0 * np.pi)).sum()

    def density(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        out = np.empty(len(z), dtype=np.float64)
        for start in range(0, len(z), _DENSITY_CHUNK):
            chunk = z[start : start + _DENSITY_CHUNK]
            diff = (chunk[:, None, :] - self.support[None, :, :]) / self.bandwidth
            logk = -0.5 * np.einsum("ijk,ijk->ij", diff, diff) + self._log_norm
            out[start : start + _DENSITY_CHUNK] = np.exp(logk).mean(axis=1)
        return out

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Exact mixture draw: uniform support point plus bandwidth noise."""
        idx = rng.integers(0, len(self.support), size=count)
        noise = rng.standard_normal((count, self.support.shape[1]))
        return self.support[idx] + noise * self.bandwidth


def kde_fit(points: np.ndarray, bandwidth_rule: str = "scott") -> KdeModel:
    """Fit a Gaussian product KDE with per-dimension Scott bandwidths."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.ndim != 2 or len(pts) < 2:
        raise ValueError("KDE needs at least 2 points")
    if bandwidth_rule != "scott":
        raise ValueError(f"unknown bandwidth rule {bandwidth_rule!r}")
    n, d = pts.shape
    sigma = pts.std(axis=0, ddof=1)
    h = sigma * n ** (-1.0 / (d + 4))
    h = np.maximum(h, 1e-9)  # keep degenerate dimensions from collapsing
    return KdeModel(pts, h)


def kde_density(model: KdeModel, z) -> np.ndarray:
    return model.density(z)


# ---------------------------------------------------------------------------
# The estimator


def estimate_gcs(
    feats_a: np.ndarray,
    feats_b: np.ndarray,
    mc_samples: int = 10_000,
    epsilon: float | None = None,
    seed: int = 0,
) -> GcsReport:
    """Importance-sampled estimate of the covariate shift between two
    feature sets.

    Proposal = KDE of the union; a draw contributes |P_a - P_b| / proposal
    only where one of the fitted part densities falls below ``epsilon``
    (the low-overlap region); the accumulated sum over twice the draw count
    is clamped into [0, 1].
    """
    feats_a = np.atleast_2d(np.asarray(feats_a, dtype=np.float64))
    feats_b = np.atleast_2d(np.asarray(feats_b, dtype=np.float64))
    if mc_samples < 1:
        raise ValueError("mc_samples must be at least 1")
    if epsilon is not None and epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if feats_a.shape[1] != feats_b.shape[1]:
        raise ValueError("feature sets have different dimensions")
    proposal = kde_fit(np.vstack([feats_a, feats_b]))
    dens_a = kde_fit(feats_a)
    dens_b = kde_fit(feats_b)
    if epsilon is None:
        peak = max(dens_a.density(feats_a).max(), dens_b.density(feats_b).max())
        epsilon = 1e-4 * peak
    rng = np.random.default_rng(seed)
    z = proposal.sample(mc_samples, rng)
    pa = dens_a.density(z)
    pb = dens_b.density(z)
    w = proposal.density(z)
    accepted = (pa < epsilon) | (pb < epsilon)
    total = float((np.abs(pa - pb)[accepted] / w[accepted]).sum())
    gcs = min(max(total / (2.0 * mc_samples), 0.0), 1.0)
    return GcsReport(
        gcs=gcs,
        mc_samples=mc_samples,
        epsilon=float(epsilon),
        feature_dim=feats_a.shape[1],
        accepted_fraction=float(accepted.mean()),
    )


def estimate_shift(set_a, set_b, config: GcsConfig) -> GcsReport:
    """Full pipeline: domain classifier, feature extraction, estimator."""
    encoder, _ = train_domain_classifier(set_a, set_b, config)
    feats_a, feats_b = extract_and_standardize(encoder, set_a, set_b, config.feature_dim)
    return estimate_gcs(feats_a, feats_b, config.mc_samples, config.epsilon, config.seed)


def measure_aug_shift(bundle, augmentation, train_set, test_set, config: GcsConfig) -> tuple[float, float]:
    """Shift of the augmented training set against train and test sets.

    ``augmentation`` maps one graph to a (possibly masked) augmented graph;
    the identity augmentation therefore gives a near-zero first component.
    """
    augmented = [augmentation(g) for g in train_set]
    aug_train = estimate_shift(augmented, list(train_set), config).gcs
    aug_test = estimate_shift(augmented, list(test_set), config).gcs
    return aug_train, aug_test


# ---------------------------------------------------------------------------
# Augmentations measured in the shift experiments


def identity_augmentation():
    return lambda g: g


def dropedge_augmentation(p: float, seed: int):
    from .engine import dropedge_augment

    rng = np.random.default_rng(seed)
    return lambda g: dropedge_augment(g, p, rng)


def advca_augmentation(bundle):
    """The combined-mask augmentation a trained bundle applies in training."""

    def augment(g: Graph) -> AugmentedGraph:
        view = GraphView.of(g)
        adv_node, adv_edge, _ = bundle.adversary.raw_masks(view)
        cau_node, cau_edge, _ = bundle.causal_gen.raw_masks(view)
        node = cau_node + adv_node * (1.0 - cau_node)
        edge = cau_edge + adv_edge * (1.0 - cau_edge)
        return AugmentedGraph(g, node.astype(np.float32), edge.astype(np.float32))

    return augment
