"""Adversarial-causal augmentation objectives, training loops, baselines.

Each training step alternates two updates. The augmenter takes a gradient
ascent step on its masked-classification loss minus a transport penalty,
pushing the augmented graphs toward harder, more diverse variants. The
backbone and the causal generator then take a descent step on the causal
objective, which classifies both the causally-masked graph and the
combined-mask graph whose causal positions are shielded from the
adversarial perturbation. The two updates touch disjoint parameter stores.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, TrainingDivergedError
from .graphs import DatasetSplit, Graph, GraphView
from .models import (
    Backbone,
    BatchMasks,
    GraphBatch,
    MaskNet,
    MaskPair,
    constant_mask,
    encode_batch,
    encode_batch_raw,
    masknet_batch,
    masknet_batch_raw,
    ones_batch_masks,
    ones_mask,
)
from .tensor import Tensor

VARIANTS = ("advca", "rdca", "wo_adv", "wo_cau", "erm", "dropedge")

METRIC_COLUMNS = (
    "epoch",
    "split",
    "loss",
    "accuracy",
    "L_adv",
    "L_cau",
    "L_reg1",
    "L_reg2",
    "mean_cau_mask_causal_nodes",
    "mean_cau_mask_env_nodes",
)


@dataclass
class TrainConfig:
    """Hyper-parameters of one training run.

    ``adv_lr`` is the ascent rate of the augmenter, ``lr`` the descent rate
    of backbone and causal generator, ``transport_penalty`` the coefficient
    on the embedding-space transport cost, ``causal_ratio`` the target
    fraction of kept causal mass, ``adv_ratio`` the (near-identity) target
    for the augmenter masks, and ``mask_threshold`` the cutoff used by the
    gradient-free counting term of the mask regularizer.
    """

    adv_lr: float = 1e-3
    lr: float = 5e-3
    transport_penalty: float = 0.2
    causal_ratio: float = 0.5
    adv_ratio: float = 1.0
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    mask_threshold: float = 0.5
    adam: bool = False
    dropedge_p: float = 0.2

    def __post_init__(self):
        if self.adv_lr <= 0 or self.lr <= 0 or self.transport_penalty <= 0:
            raise ConfigError("learning rates and transport penalty must be positive")
        if not 0 < self.causal_ratio < 1:
            raise ConfigError("causal_ratio must lie strictly between 0 and 1")
        if not 0 < self.adv_ratio <= 1:
            raise ConfigError("adv_ratio must lie in (0, 1]")
        if not 0 < self.mask_threshold < 1:
            raise ConfigError("mask_threshold must lie strictly between 0 and 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be at least 1")
        if not 0 <= self.dropedge_p < 1:
            raise ConfigError("dropedge_p must lie in [0, 1)")


@dataclass
class ModelSizes:
    hidden: int = 64
    layers: int = 3
    mask_hidden: int = 64
    mask_layers: int = 2


class ModelBundle:
    """Backbone plus adversarial augmenter and causal generator.

    The three parameter stores are disjoint; the trainer only ever applies
    ascent updates to the augmenter and descent updates to the rest.
    """

    def __init__(self, seed: int, feature_dim: int, num_classes: int = 3, sizes: ModelSizes | None = None):
        sizes = sizes or ModelSizes()
        rng = np.random.default_rng(seed)
        self.backbone = Backbone(rng, feature_dim, sizes.hidden, sizes.layers, num_classes)
        self.adversary = MaskNet(rng, feature_dim, sizes.mask_hidden, sizes.mask_layers)
        self.causal_gen = MaskNet(rng, feature_dim, sizes.mask_hidden, sizes.mask_layers)

    def theta_parameters(self):
        return list(self.backbone.named_parameters("backbone"))

    def adversary_parameters(self):
        return list(self.adversary.named_parameters("adversary"))

    def causal_parameters(self):
        return list(self.causal_gen.named_parameters("causal"))

    def named_parameters(self):
        return self.theta_parameters() + self.adversary_parameters() + self.causal_parameters()

    def zero_grads(self):
        for _, p in self.named_parameters():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]):
        for name, p in self.named_parameters():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()

    def predict(self, graph: Graph | GraphView) -> int:
        """Classify through the causal generator's masks (inference rule).

        Ties in the argmax resolve to the lowest class index.
        """
        view = GraphView.of(graph)
        node, edge, _ = self.causal_gen.raw_masks(view)
        return self.backbone.predict_raw(view, node, edge)


def predict(bundle: ModelBundle, graph: Graph | GraphView) -> int:
    return bundle.predict(graph)


# ---------------------------------------------------------------------------
# Objectives


def transport_cost(encoder, view: GraphView, mask: MaskPair, detach_original: bool = False) -> Tensor:
    """Squared distance between the masked and unmasked graph embeddings.

    ``detach_original`` skips taping the unmasked embedding; it carries no
    mask dependence, so ascent gradients are unaffected.
    """
    _, emb_masked = encoder.encode(view, mask)
    if detach_original:
        _, emb_plain = encoder.encode_raw(view)
        emb_plain = Tensor(emb_plain)
    else:
        _, emb_plain = encoder.encode(view)
    return T.squared_l2_distance(emb_masked, emb_plain)


def adversarial_loss(
    views: list[GraphView],
    labels: list[int],
    bundle: ModelBundle,
    transport_penalty: float,
    masks: list[MaskPair] | None = None,
    detach_original: bool = False,
) -> tuple[Tensor, list[MaskPair]]:
    """Mean of classification loss minus the penalized transport cost on
    adversarially-masked graphs. Masks come from the augmenter unless given."""
    if not views:
        raise ValueError("empty batch")
    terms = []
    out_masks = []
    for i, (view, y) in enumerate(zip(views, labels)):
        mask = masks[i] if masks is not None else bundle.adversary(view)
        out_masks.append(mask)
        _, emb_masked = bundle.backbone.encoder.encode(view, mask)
        ce = T.softmax_cross_entropy(bundle.backbone.classifier(emb_masked), y)
        if detach_original:
            _, emb_plain = bundle.backbone.encoder.encode_raw(view)
            emb_plain = Tensor(emb_plain)
        else:
            _, emb_plain = bundle.backbone.encoder.encode(view)
        cost = T.squared_l2_distance(emb_masked, emb_plain)
        terms.append(ce - transport_penalty * cost)
    return _mean_scalars(terms), out_masks


def combine_masks(adv: MaskPair, cau: MaskPair) -> MaskPair:
    """Overlay: keep causal positions, expose the rest to the perturbation.

    Elementwise ``combined = cau + adv * (1 - cau)``; off-support entries of
    the edge masks are zero in both inputs and stay exactly zero.
    """
    if adv.node_mask.shape != cau.node_mask.shape or adv.edge_mask.shape != cau.edge_mask.shape:
        raise ValueError("mask pairs have mismatched shapes")
    return MaskPair(
        _overlay(adv.node_mask, cau.node_mask),
        _overlay(adv.edge_mask, cau.edge_mask),
        _overlay(adv.edge_values, cau.edge_values),
    )


def _overlay(adv: Tensor, cau: Tensor) -> Tensor:
    return T.add(cau, T.mul(adv, T.sub(1.0, cau)))


def regularizer(mask_values: Tensor, k: int, ratio: float, threshold: float) -> Tensor:
    """Deviation of the mean mask ratio from ``ratio`` plus the (constant,
    gradient-free) deviation of the above-threshold fraction."""
    if k <= 0:
        raise ValueError("regularizer needs at least one constrained element")
    mean_term = T.absolute(T.reduce_sum(mask_values) * (1.0 / k) - ratio)
    above = float(np.count_nonzero(mask_values.data > threshold)) / k
    return mean_term + abs(above - ratio)


def mask_regularization(mask_pairs: list[MaskPair], views: list[GraphView], ratio: float, threshold: float) -> Tensor:
    """Mean over the batch of node-mask plus edge-mask regularizers."""
    terms = []
    for pair, view in zip(mask_pairs, views):
        r = regularizer(pair.node_mask, view.num_nodes, ratio, threshold)
        if view.num_edges:
            r = r + regularizer(pair.edge_values, view.num_edges, ratio, threshold)
        terms.append(r)
    return _mean_scalars(terms)


def causal_loss(
    views: list[GraphView],
    labels: list[int],
    bundle: ModelBundle,
    adv_masks: list[MaskPair] | None = None,
    causal_masks: list[MaskPair] | None = None,
    detach_adv: bool = True,
) -> tuple[Tensor, list[MaskPair]]:
    """Mean loss of the causally-masked graph plus the combined-mask graph.

    Adversarial masks are treated as constants by default so the descent
    step cannot reach the augmenter; pass ``causal_masks`` to override the
    causal generator (e.g. random or frozen masks).
    """
    if not views:
        raise ValueError("empty batch")
    terms = []
    cau_pairs = []
    for i, (view, y) in enumerate(zip(views, labels)):
        if causal_masks is not None:
            cau = causal_masks[i]
        else:
            cau = bundle.causal_gen(view)
        cau_pairs.append(cau)
        if adv_masks is not None:
            adv = adv_masks[i]
        elif detach_adv:
            node, edge, values = bundle.adversary.raw_masks(view)
            adv = MaskPair(Tensor(node), Tensor(edge), Tensor(values))
        else:
            adv = bundle.adversary(view)
        combined = combine_masks(adv, cau)
        ce_causal = T.softmax_cross_entropy(bundle.backbone.logits(view, cau), y)
        ce_combined = T.softmax_cross_entropy(bundle.backbone.logits(view, combined), y)
        terms.append(ce_causal + ce_combined)
    return _mean_scalars(terms), cau_pairs


def _mean_scalars(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


# ---------------------------------------------------------------------------
# Optimizer steps


def sgd_step(params, lr: float, sign: float = -1.0):
    """Plain gradient step ``p += sign * lr * grad`` (ascent with sign +1)."""
    for _, p in params:
        p.data = p.data + (sign * lr) * p.grad


class AdamState:
    """Optional adaptive moments; off by default to keep the literal rules."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params}
        self.v = {name: np.zeros_like(p.data) for name, p in params}

    def step(self, params, lr: float, sign: float = -1.0):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in params:
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1**self.t)
            v_hat = self.v[name] / (1 - b2**self.t)
            p.data = p.data + (sign * lr) * (m_hat / (np.sqrt(v_hat) + self.eps))


def ascent_step(views, labels, bundle: ModelBundle, config: TrainConfig, optimizer=None) -> dict[str, float]:
    """Gradient ascent on the augmenter: maximize loss minus penalty terms."""
    bundle.zero_grads()
    loss_adv, adv_pairs = adversarial_loss(
        views, labels, bundle, config.transport_penalty, detach_original=True
    )
    reg1 = mask_regularization(adv_pairs, views, config.adv_ratio, config.mask_threshold)
    objective = loss_adv - reg1
    info = {"L_adv": loss_adv.item(), "L_reg1": reg1.item()}
    if not np.isfinite(objective.item()):
        raise TrainingDivergedError("non-finite adversarial objective")
    objective.backward()
    if optimizer is not None:
        optimizer.step(bundle.adversary_parameters(), config.adv_lr, sign=+1.0)
    else:
        sgd_step(bundle.adversary_parameters(), config.adv_lr, sign=+1.0)
    bundle.zero_grads()
    return info


def descent_step(
    views,
    labels,
    bundle: ModelBundle,
    config: TrainConfig,
    adv_masks=None,
    causal_masks=None,
    optimizer=None,
) -> dict[str, float]:
    """Gradient descent on backbone and causal generator."""
    bundle.zero_grads()
    loss_cau, cau_pairs = causal_loss(views, labels, bundle, adv_masks=adv_masks, causal_masks=causal_masks)
    reg2 = mask_regularization(cau_pairs, views, config.causal_ratio, config.mask_threshold)
    total = loss_cau + reg2
    info = {"L_cau": loss_cau.item(), "L_reg2": reg2.item()}
    if not np.isfinite(total.item()):
        raise TrainingDivergedError("non-finite causal objective")
    total.backward()
    params = bundle.theta_parameters() + bundle.causal_parameters()
    if optimizer is not None:
        optimizer.step(params, config.lr)
    else:
        sgd_step(params, config.lr)
    bundle.zero_grads()
    return info


def _augmented_only_step(views, labels, bundle: ModelBundle, config: TrainConfig, optimizer=None) -> dict[str, float]:
    """Descent of the backbone alone on adversarially-masked graphs."""
    bundle.zero_grads()
    terms = []
    for view, y in zip(views, labels):
        node, edge, values = bundle.adversary.raw_masks(view)
        mask = MaskPair(Tensor(node), Tensor(edge), Tensor(values))
        terms.append(T.softmax_cross_entropy(bundle.backbone.logits(view, mask), y))
    loss = _mean_scalars(terms)
    info = {"L_cau": loss.item(), "L_reg2": 0.0}
    if not np.isfinite(loss.item()):
        raise TrainingDivergedError("non-finite loss")
    loss.backward()
    if optimizer is not None:
        optimizer.step(bundle.theta_parameters(), config.lr)
    else:
        sgd_step(bundle.theta_parameters(), config.lr)
    bundle.zero_grads()
    return info


# ---------------------------------------------------------------------------
# Baseline augmentations


def dropedge_augment(graph: Graph, p: float, rng: np.random.Generator) -> Graph:
    """Remove each undirected edge independently with probability ``p``."""
    if not 0 <= p < 1:
        raise ValueError("drop probability must lie in [0, 1)")
    keep = rng.random(len(graph.edges)) >= p
    edges = [e for e, k in zip(graph.edges, keep) if k]
    return Graph(
        id=graph.id,
        num_nodes=graph.num_nodes,
        edges=edges,
        features=graph.features,
        label=graph.label,
        env=graph.env,
        causal_nodes=graph.causal_nodes,
    )


RANDOM_MASK_ZERO_FRACTION = 0.2


def rdca_random_masks(view: GraphView, rng: np.random.Generator) -> MaskPair:
    """All-one masks with a random 20% of support entries zeroed.

    Exactly ``floor(0.2 n)`` node entries and ``floor(0.2 m)`` undirected
    edges are zeroed; off-support entries stay zero.
    """
    n = view.num_nodes
    m = view.num_edges
    node = np.ones((n, 1), dtype=np.float32)
    k_nodes = int(RANDOM_MASK_ZERO_FRACTION * n)
    if k_nodes:
        node[rng.choice(n, size=k_nodes, replace=False), 0] = 0.0
    edge = view.adjacency.copy()
    values = np.ones((m, 1), dtype=np.float32)
    k_edges = int(RANDOM_MASK_ZERO_FRACTION * m)
    if k_edges:
        for idx in rng.choice(m, size=k_edges, replace=False):
            i, j = view.edges[idx]
            edge[i, j] = 0.0
            edge[j, i] = 0.0
            values[idx, 0] = 0.0
    return MaskPair(Tensor(node), Tensor(edge), Tensor(values))


# ---------------------------------------------------------------------------
# Batched execution (block-diagonal fusion of a whole batch; same per-graph
# math as the single-graph objectives, used by the training loops for speed)


def _batch_count_dev(batch: GraphBatch, node_mask: np.ndarray, edge_values: np.ndarray, ratio, threshold):
    """Per-graph gradient-free deviation of the above-threshold fractions."""
    out = np.zeros((len(batch.views), 1), dtype=np.float32)
    for g, view in enumerate(batch.views):
        lo, hi = batch.offsets[g], batch.offsets[g + 1]
        node_frac = float((node_mask[lo:hi, 0] > threshold).mean())
        out[g, 0] = abs(node_frac - ratio)
        start, m = batch.edge_slices[g]
        if m:
            edge_frac = float((edge_values[start : start + m, 0] > threshold).mean())
            out[g, 0] += abs(edge_frac - ratio)
    return out


def _batch_regularization(batch: GraphBatch, masks: BatchMasks, ratio: float, threshold: float) -> Tensor:
    """Batched mean of the per-graph node plus edge regularizers."""
    node_means = T.matmul(Tensor(batch.readout), masks.node_mask)  # (B, 1)
    dev = T.absolute(node_means - ratio)
    if batch.num_directed:
        edge_means = T.matmul(Tensor(batch.edge_mean), masks.edge_values)  # (B, 1)
        has_edges = Tensor((batch.edge_counts > 0).astype(np.float32))
        dev = dev + T.mul(T.absolute(edge_means - ratio), has_edges)
    counts = _batch_count_dev(batch, masks.node_mask.data, masks.edge_values.data, ratio, threshold)
    return T.reduce_mean(dev + Tensor(counts))


def _detached_batch_masks(bundle: ModelBundle, batch: GraphBatch) -> BatchMasks:
    node, edge, values = masknet_batch_raw(bundle.adversary, batch)
    return BatchMasks(Tensor(node), Tensor(edge), Tensor(values))


def _random_batch_masks(batch: GraphBatch, rng: np.random.Generator) -> BatchMasks:
    nodes, values = [], []
    edge = np.zeros_like(batch.adjacency)
    for g, view in enumerate(batch.views):
        pair = rdca_random_masks(view, rng)
        nodes.append(pair.node_mask.data)
        lo = batch.offsets[g]
        n = view.num_nodes
        edge[lo : lo + n, lo : lo + n] = pair.edge_mask.data
        values.append(np.concatenate([pair.edge_values.data, pair.edge_values.data]))
    vals = np.concatenate(values) if values else np.zeros((0, 1), np.float32)
    return BatchMasks(Tensor(np.concatenate(nodes)), Tensor(edge), Tensor(vals))


def _combine_batch_masks(adv: BatchMasks, cau: BatchMasks) -> BatchMasks:
    return BatchMasks(
        _overlay(adv.node_mask, cau.node_mask),
        _overlay(adv.edge_mask, cau.edge_mask),
        _overlay(adv.edge_values, cau.edge_values),
    )


def batched_ascent_step(batch: GraphBatch, bundle: ModelBundle, config: TrainConfig, optimizer=None):
    bundle.zero_grads()
    masks = masknet_batch(bundle.adversary, batch)
    _, emb_masked = encode_batch(bundle.backbone.encoder, batch, masks)
    logits = bundle.backbone.classifier.rows(emb_masked)
    ce = T.cross_entropy_rows(logits, batch.labels)
    _, emb_plain = encode_batch_raw(bundle.backbone.encoder, batch)
    diff = emb_masked - Tensor(emb_plain)
    cost = T.reduce_sum(T.mul(diff, diff), axis=1)
    loss_adv = T.reduce_mean(ce - config.transport_penalty * cost)
    reg1 = _batch_regularization(batch, masks, config.adv_ratio, config.mask_threshold)
    objective = loss_adv - reg1
    info = {"L_adv": loss_adv.item(), "L_reg1": reg1.item()}
    if not np.isfinite(objective.item()):
        raise TrainingDivergedError("non-finite adversarial objective")
    objective.backward()
    if optimizer is not None:
        optimizer.step(bundle.adversary_parameters(), config.adv_lr, sign=+1.0)
    else:
        sgd_step(bundle.adversary_parameters(), config.adv_lr, sign=+1.0)
    bundle.zero_grads()
    return info


def batched_descent_step(
    batch: GraphBatch,
    bundle: ModelBundle,
    config: TrainConfig,
    adv_mode: str = "model",
    mask_rng: np.random.Generator | None = None,
    optimizer=None,
):
    bundle.zero_grads()
    cau = masknet_batch(bundle.causal_gen, batch)
    if adv_mode == "model":
        adv = _detached_batch_masks(bundle, batch)
    elif adv_mode == "random":
        adv = _random_batch_masks(batch, mask_rng)
    elif adv_mode == "ones":
        adv = ones_batch_masks(batch)
    else:
        raise ValueError(f"unknown adversarial-mask mode {adv_mode!r}")
    combined = _combine_batch_masks(adv, cau)
    _, emb_causal = encode_batch(bundle.backbone.encoder, batch, cau)
    _, emb_combined = encode_batch(bundle.backbone.encoder, batch, combined)
    ce_causal = T.cross_entropy_rows(bundle.backbone.classifier.rows(emb_causal), batch.labels)
    ce_combined = T.cross_entropy_rows(bundle.backbone.classifier.rows(emb_combined), batch.labels)
    loss_cau = T.reduce_mean(ce_causal + ce_combined)
    reg2 = _batch_regularization(batch, cau, config.causal_ratio, config.mask_threshold)
    total = loss_cau + reg2
    info = {"L_cau": loss_cau.item(), "L_reg2": reg2.item()}
    if not np.isfinite(total.item()):
        raise TrainingDivergedError("non-finite causal objective")
    total.backward()
    params = bundle.theta_parameters() + bundle.causal_parameters()
    if optimizer is not None:
        optimizer.step(params, config.lr)
    else:
        sgd_step(params, config.lr)
    bundle.zero_grads()
    return info


def batched_augmented_only_step(batch: GraphBatch, bundle: ModelBundle, config: TrainConfig, optimizer=None):
    bundle.zero_grads()
    adv = _detached_batch_masks(bundle, batch)
    _, emb = encode_batch(bundle.backbone.encoder, batch, adv)
    ce = T.cross_entropy_rows(bundle.backbone.classifier.rows(emb), batch.labels)
    loss = T.reduce_mean(ce)
    info = {"L_cau": loss.item(), "L_reg2": 0.0}
    if not np.isfinite(loss.item()):
        raise TrainingDivergedError("non-finite loss")
    loss.backward()
    if optimizer is not None:
        optimizer.step(bundle.theta_parameters(), config.lr)
    else:
        sgd_step(bundle.theta_parameters(), config.lr)
    bundle.zero_grads()
    return info


def _eval_chunks(views: list[GraphView], chunk: int = 150) -> list[GraphBatch]:
    return [GraphBatch(views[i : i + chunk]) for i in range(0, len(views), chunk)]


def _batched_logits(backbone: Backbone, causal_gen: MaskNet | None, chunks: list[GraphBatch]) -> np.ndarray:
    rows = []
    for batch in chunks:
        if causal_gen is not None:
            node, edge, _ = masknet_batch_raw(causal_gen, batch)
            _, emb = encode_batch_raw(backbone.encoder, batch, node, edge)
        else:
            _, emb = encode_batch_raw(backbone.encoder, batch)
        rows.append(backbone.classifier.rows_raw(emb))
    return np.concatenate(rows, axis=0)


def _chunk_metrics(backbone: Backbone, causal_gen: MaskNet | None, chunks, labels) -> tuple[float, float]:
    logits = _batched_logits(backbone, causal_gen, chunks).astype(np.float64)
    labels = np.asarray(labels)
    acc = float((logits.argmax(axis=1) == labels).mean())
    shifted = logits - logits.max(axis=1, keepdims=True)
    ce = np.log(np.exp(shifted).sum(axis=1)) - shifted[np.arange(len(labels)), labels]
    return acc, float(ce.mean())


def _chunk_mask_statistics(causal_gen: MaskNet, chunks: list[GraphBatch], causal_flags: np.ndarray):
    vals = []
    for batch in chunks:
        node, _, _ = masknet_batch_raw(causal_gen, batch)
        vals.append(node[:, 0])
    values = np.concatenate(vals)
    return float(values[causal_flags].mean()), float(values[~causal_flags].mean())


# ---------------------------------------------------------------------------
# Training loops


@dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int
    best_val_accuracy: float
    test_accuracy: float | None = None
    duration_s: float = 0.0
    partition_checked: bool = False


def _as_views(graphs) -> tuple[list[GraphView], list[int]]:
    views = [GraphView.of(g) for g in graphs]
    labels = [v.label for v in views]
    return views, labels


def _accuracy_and_loss(predict_logits, views, labels) -> tuple[float, float]:
    correct = 0
    losses = []
    for view, y in zip(views, labels):
        logits = predict_logits(view).astype(np.float64)
        if int(np.argmax(logits)) == y:
            correct += 1
        shifted = logits - logits.max()
        losses.append(float(np.log(np.exp(shifted).sum()) - shifted[y]))
    return correct / len(views), float(np.mean(losses))


def _mask_statistics(causal_gen: MaskNet, graphs) -> tuple[float, float]:
    """Mean causal node-mask value over motif nodes and over base nodes."""
    causal_vals = []
    env_vals = []
    for g in graphs:
        view = GraphView.of(g)
        node, _, _ = causal_gen.raw_masks(view)
        flags = np.asarray(g.causal_nodes, dtype=bool)
        causal_vals.extend(node[flags, 0].tolist())
        env_vals.extend(node[~flags, 0].tolist())
    return float(np.mean(causal_vals)), float(np.mean(env_vals))


def mask_separation(bundle: ModelBundle, graphs) -> float:
    """Causal-mask contrast: mean on motif nodes minus mean on base nodes."""
    on_causal, on_env = _mask_statistics(bundle.causal_gen, graphs)
    return on_causal - on_env


def train(
    bundle: ModelBundle,
    split: DatasetSplit,
    config: TrainConfig,
    variant: str = "advca",
    assert_partition: bool = False,
    eval_train: bool = True,
) -> TrainResult:
    """Alternating training of Algorithm-style mask methods.

    Per batch: (1) forward both mask networks, (2) ascent on the augmenter,
    (3) fresh forward and descent on backbone plus causal generator. Model
    selection keeps the epoch with the best validation accuracy. With
    ``assert_partition`` the step partition is verified bitwise every batch.
    """
    if variant not in ("advca", "rdca", "wo_adv", "wo_cau"):
        raise ValueError(f"train() handles mask variants, not {variant!r}")
    if not split.train:
        raise ValueError("empty training split")
    t0 = time.monotonic()
    train_views, train_labels = _as_views(split.train)
    val_views, val_labels = _as_views(split.val)
    rng = np.random.default_rng(config.seed)
    uses_ascent = variant in ("advca", "wo_cau")
    uses_causal = variant != "wo_cau"
    adv_mode = {"advca": "model", "rdca": "random", "wo_adv": "ones"}.get(variant)

    adv_opt = AdamState(bundle.adversary_parameters()) if config.adam and uses_ascent else None
    desc_params = bundle.theta_parameters() + (bundle.causal_parameters() if uses_causal else [])
    desc_opt = AdamState(desc_params) if config.adam else None

    train_chunks = _eval_chunks(train_views)
    val_chunks = _eval_chunks(val_views)
    val_causal_flags = np.concatenate([g.causal_nodes for g in split.val]).astype(bool)

    history: list[dict] = []
    best = (-1.0, -1, None)  # (val accuracy, epoch, state)
    n = len(train_views)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        mask_rng = np.random.default_rng(rng.integers(0, 2**63))
        sums = {"L_adv": 0.0, "L_cau": 0.0, "L_reg1": 0.0, "L_reg2": 0.0}
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = GraphBatch([train_views[i] for i in idx])
            batch_tag = f"epoch {epoch}, batch {batches}"
            frozen = bundle_snapshot(bundle, "theta_causal") if assert_partition else None
            if uses_ascent:
                try:
                    info = batched_ascent_step(batch, bundle, config, adv_opt)
                except TrainingDivergedError as exc:
                    raise TrainingDivergedError(f"{batch_tag}: {exc}") from None
                sums["L_adv"] += info["L_adv"]
                sums["L_reg1"] += info["L_reg1"]
                if assert_partition and not snapshot_equal(bundle, "theta_causal", frozen):
                    raise AssertionError(f"{batch_tag}: ascent step touched protected parameters")
            frozen_adv = bundle_snapshot(bundle, "adversary") if assert_partition else None
            try:
                if uses_causal:
                    info = batched_descent_step(
                        batch, bundle, config, adv_mode=adv_mode, mask_rng=mask_rng, optimizer=desc_opt
                    )
                else:  # adversarial augmentation without the causal pathway
                    info = batched_augmented_only_step(batch, bundle, config, desc_opt)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(f"{batch_tag}: {exc}") from None
            sums["L_cau"] += info["L_cau"]
            sums["L_reg2"] += info["L_reg2"]
            if assert_partition and uses_ascent and not snapshot_equal(bundle, "adversary", frozen_adv):
                raise AssertionError(f"{batch_tag}: descent step touched the augmenter")
            batches += 1

        eval_gen = bundle.causal_gen if uses_causal else None
        if eval_train:
            train_acc, train_loss = _chunk_metrics(bundle.backbone, eval_gen, train_chunks, train_labels)
        else:
            train_acc = train_loss = ""
        val_acc, val_loss = _chunk_metrics(bundle.backbone, eval_gen, val_chunks, val_labels)
        if uses_causal:
            mask_causal, mask_env = _chunk_mask_statistics(bundle.causal_gen, val_chunks, val_causal_flags)
        else:
            mask_causal = mask_env = ""
        history.append(
            {
                "epoch": epoch,
                "split": "train",
                "loss": train_loss,
                "accuracy": train_acc,
                "L_adv": sums["L_adv"] / batches if uses_ascent else "",
                "L_cau": sums["L_cau"] / batches,
                "L_reg1": sums["L_reg1"] / batches if uses_ascent else "",
                "L_reg2": sums["L_reg2"] / batches,
                "mean_cau_mask_causal_nodes": mask_causal,
                "mean_cau_mask_env_nodes": mask_env,
            }
        )
        history.append(_eval_row(epoch, "val", val_loss, val_acc))
        if val_acc > best[0]:
            best = (val_acc, epoch, bundle.state())
    if best[2] is not None:
        bundle.load_state(best[2])
    return TrainResult(
        history=history,
        best_epoch=best[1],
        best_val_accuracy=best[0],
        duration_s=time.monotonic() - t0,
        partition_checked=assert_partition,
    )


def _eval_row(epoch, split, loss, acc) -> dict:
    return {
        "epoch": epoch,
        "split": split,
        "loss": loss,
        "accuracy": acc,
        "L_adv": "",
        "L_cau": "",
        "L_reg1": "",
        "L_reg2": "",
        "mean_cau_mask_causal_nodes": "",
        "mean_cau_mask_env_nodes": "",
    }


def erm_train(
    backbone: Backbone,
    split: DatasetSplit,
    config: TrainConfig,
    augment=None,
) -> TrainResult:
    """Plain cross-entropy descent on (optionally augmented) graphs.

    ``augment`` is a per-graph callable applied freshly each epoch, e.g. a
    seeded edge-dropper; evaluation always uses the unaugmented graphs.
    """
    if not split.train:
        raise ValueError("empty training split")
    t0 = time.monotonic()
    train_graphs = split.train
    train_views, train_labels = _as_views(train_graphs)
    val_views, val_labels = _as_views(split.val)
    rng = np.random.default_rng(config.seed)
    params = list(backbone.named_parameters("backbone"))
    optimizer = AdamState(params) if config.adam else None
    history: list[dict] = []
    best = (-1.0, -1, None)
    n = len(train_views)
    train_chunks = _eval_chunks(train_views)
    val_chunks = _eval_chunks(val_views)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        if augment is not None:
            epoch_views = [GraphView.of(augment(g)) for g in train_graphs]
        else:
            epoch_views = train_views
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = GraphBatch([epoch_views[i] for i in idx])
            for _, p in params:
                p.zero_grad()
            _, emb = encode_batch(backbone.encoder, batch)
            loss = T.reduce_mean(T.cross_entropy_rows(backbone.classifier.rows(emb), batch.labels))
            if not np.isfinite(loss.item()):
                raise TrainingDivergedError(f"epoch {epoch}, batch {batches}: non-finite loss")
            loss.backward()
            if optimizer is not None:
                optimizer.step(params, config.lr)
            else:
                sgd_step(params, config.lr)
            for _, p in params:
                p.zero_grad()
            batches += 1
        train_acc, train_loss = _chunk_metrics(backbone, None, train_chunks, train_labels)
        val_acc, val_loss = _chunk_metrics(backbone, None, val_chunks, val_labels)
        row = _eval_row(epoch, "train", train_loss, train_acc)
        history.append(row)
        history.append(_eval_row(epoch, "val", val_loss, val_acc))
        if val_acc > best[0]:
            best = (val_acc, epoch, {name: p.data.copy() for name, p in params})
    if best[2] is not None:
        for name, p in params:
            p.data = best[2][name].copy()
    return TrainResult(
        history=history,
        best_epoch=best[1],
        best_val_accuracy=best[0],
        duration_s=time.monotonic() - t0,
    )


# ---------------------------------------------------------------------------
# Partition bookkeeping

_GROUPS = {
    "theta_causal": lambda b: b.theta_parameters() + b.causal_parameters(),
    "adversary": lambda b: b.adversary_parameters(),
}


def bundle_snapshot(bundle: ModelBundle, group: str) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in _GROUPS[group](bundle)}


def snapshot_equal(bundle: ModelBundle, group: str, snapshot: dict[str, np.ndarray]) -> bool:
    """Bitwise comparison of a parameter group against a snapshot."""
    for name, p in _GROUPS[group](bundle):
        before = snapshot[name]
        if before.shape != p.data.shape or before.tobytes() != p.data.tobytes():
            return False
    return True
