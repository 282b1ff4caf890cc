"""GIN encoder, logit head, and soft-mask generation networks.

The mask networks share one architecture: a private GIN encoder feeding a
node-score head and an edge-score head. Edge scores are computed for both
orientations of every undirected edge and averaged, so the edge mask is
symmetric by construction and exactly zero off the adjacency support.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graphs import GraphView
from .tensor import Tensor

CHECKPOINT_MAGIC = b"ADVCA1"


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Linear:
    def __init__(self, rng, d_in: int, d_out: int):
        self.w = Tensor(_uniform(rng, d_in, (d_in, d_out)), requires_grad=True)
        self.b = Tensor(_uniform(rng, d_in, (d_out,)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.affine(x, self.w, self.b)

    def raw(self, x: np.ndarray) -> np.ndarray:
        return x @ self.w.data + self.b.data

    def named_parameters(self, prefix: str):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b


class Mlp:
    """Linear stack with ReLU between layers (none after the last)."""

    def __init__(self, rng, dims: list[int]):
        if len(dims) < 2:
            raise ValueError("an MLP needs at least one linear layer")
        self.layers = [Linear(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last:
                x = T.relu(x)
        return x

    def raw(self, x: np.ndarray) -> np.ndarray:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer.raw(x)
            if i < last:
                x = np.maximum(x, 0)
        return x

    def named_parameters(self, prefix: str):
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}.lin{i}")


@dataclass
class MaskPair:
    """Soft node mask (n, 1), symmetric edge mask (n, n) supported on the
    adjacency, and the per-undirected-edge mask values (m, 1) in the order
    the graph stores its edges."""

    node_mask: Tensor
    edge_mask: Tensor
    edge_values: Tensor


class GinEncoder:
    """Message passing ``H <- MLP(H + A_hat @ H)`` with mean readout.

    ``A_hat`` is the 0/1 adjacency, elementwise-scaled by the edge mask
    when one is given; the input node states are the features scaled by
    the node mask. Self-information enters through the plain ``+ H`` term.
    """

    def __init__(self, rng, in_dim: int, hidden_dim: int, num_layers: int):
        if num_layers < 1:
            raise ValueError("encoder needs at least one layer")
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.layers = [
            Mlp(rng, [in_dim if i == 0 else hidden_dim, hidden_dim, hidden_dim])
            for i in range(num_layers)
        ]

    def _check_mask(self, view: GraphView, mask: MaskPair):
        n = view.num_nodes
        if mask.node_mask.shape != (n, 1):
            raise ValueError(f"node mask shape {mask.node_mask.shape} does not match {n} nodes")
        if mask.edge_mask.shape != (n, n):
            raise ValueError(f"edge mask shape {mask.edge_mask.shape} does not match {n} nodes")

    def encode(self, view: GraphView, mask: MaskPair | None = None) -> tuple[Tensor, Tensor]:
        """Return node states Z (n, d) and the mean-pooled embedding (d,)."""
        features = Tensor(view.features)
        adjacency = Tensor(view.adjacency)
        if mask is not None:
            self._check_mask(view, mask)
            h = T.mul(features, mask.node_mask)
            a_hat = T.mul(adjacency, mask.edge_mask)
        else:
            h = features
            a_hat = adjacency
        for mlp in self.layers:
            h = mlp(T.add(h, T.matmul(a_hat, h)))
        return h, T.reduce_mean(h, axis=0)

    def encode_raw(self, view: GraphView, node_mask=None, edge_mask=None) -> tuple[np.ndarray, np.ndarray]:
        """Numpy mirror of ``encode`` for gradient-free evaluation."""
        h = view.features
        a_hat = view.adjacency
        if node_mask is not None:
            h = h * node_mask
        if edge_mask is not None:
            a_hat = a_hat * edge_mask
        for mlp in self.layers:
            h = mlp.raw(h + a_hat @ h)
        return h, h.mean(axis=0)

    def named_parameters(self, prefix: str):
        for i, mlp in enumerate(self.layers):
            yield from mlp.named_parameters(f"{prefix}.layer{i}")


class Classifier:
    """Logit head over graph embeddings; a plain linear map by default."""

    def __init__(self, rng, in_dim: int, num_classes: int, hidden: tuple[int, ...] = ()):
        self.num_classes = num_classes
        self.mlp = Mlp(rng, [in_dim, *hidden, num_classes])

    def __call__(self, embedding: Tensor) -> Tensor:
        out = self.mlp(T.reshape(embedding, (1, embedding.size)))
        return T.reshape(out, (self.num_classes,))

    def rows(self, embeddings: Tensor) -> Tensor:
        """Logits for a stack of embeddings, one row per graph."""
        return self.mlp(embeddings)

    def rows_raw(self, embeddings: np.ndarray) -> np.ndarray:
        return self.mlp.raw(embeddings)

    def raw(self, embedding: np.ndarray) -> np.ndarray:
        return self.mlp.raw(embedding.reshape(1, -1)).reshape(-1)

    def named_parameters(self, prefix: str):
        yield from self.mlp.named_parameters(f"{prefix}.head")


class Backbone:
    """Graph classifier: encoder followed by a logit head."""

    def __init__(self, rng, feature_dim: int, hidden_dim: int, num_layers: int, num_classes: int = 3):
        self.encoder = GinEncoder(rng, feature_dim, hidden_dim, num_layers)
        self.classifier = Classifier(rng, hidden_dim, num_classes)

    def logits(self, view: GraphView, mask: MaskPair | None = None) -> Tensor:
        _, embedding = self.encoder.encode(view, mask)
        return self.classifier(embedding)

    def logits_raw(self, view: GraphView, node_mask=None, edge_mask=None) -> np.ndarray:
        _, embedding = self.encoder.encode_raw(view, node_mask, edge_mask)
        return self.classifier.raw(embedding)

    def predict_raw(self, view: GraphView, node_mask=None, edge_mask=None) -> int:
        return int(np.argmax(self.logits_raw(view, node_mask, edge_mask)))

    def named_parameters(self, prefix: str = "backbone"):
        yield from self.encoder.named_parameters(f"{prefix}.enc")
        yield from self.classifier.named_parameters(f"{prefix}.cls")


class MaskNet:
    """Soft-mask generator: private GIN encoder plus node/edge score heads."""

    def __init__(self, rng, feature_dim: int, hidden_dim: int, num_layers: int):
        self.encoder = GinEncoder(rng, feature_dim, hidden_dim, num_layers)
        self.node_head = Linear(rng, hidden_dim, 1)
        self.edge_head = Linear(rng, 2 * hidden_dim, 1)

    def __call__(self, view: GraphView) -> MaskPair:
        if view.num_nodes < 1:
            raise ValueError("cannot mask an empty graph")
        z, _ = self.encoder.encode(view)
        node_mask = T.sigmoid(self.node_head(z))
        n = view.num_nodes
        m = view.num_edges
        if m == 0:
            zero_mat = Tensor(np.zeros((n, n), dtype=np.float32))
            zero_vals = Tensor(np.zeros((0, 1), dtype=np.float32))
            return MaskPair(node_mask, zero_mat, zero_vals)
        src, dst, rev, flat = view.edge_arrays
        pair_features = T.concat((T.gather_rows(z, src), T.gather_rows(z, dst)), axis=1)
        raw = T.sigmoid(self.edge_head(pair_features))  # (2m, 1), both orientations
        sym = T.mul(T.add(raw, T.gather_rows(raw, rev)), 0.5)
        edge_mask = T.reshape(T.scatter_rows(sym, flat, n * n), (n, n))
        edge_values = T.gather_rows(sym, np.arange(m))
        return MaskPair(node_mask, edge_mask, edge_values)

    def raw_masks(self, view: GraphView) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gradient-free (node_mask, edge_mask, edge_values) arrays."""
        z, _ = self.encoder.encode_raw(view)
        node = _sigmoid_np(self.node_head.raw(z))
        n = view.num_nodes
        m = view.num_edges
        if m == 0:
            return node, np.zeros((n, n), dtype=node.dtype), np.zeros((0, 1), dtype=node.dtype)
        src, dst, rev, flat = view.edge_arrays
        raw = _sigmoid_np(self.edge_head.raw(np.concatenate([z[src], z[dst]], axis=1)))
        sym = (raw + raw[rev]) * 0.5
        edge = np.zeros((n * n, 1), dtype=node.dtype)
        edge[flat] = sym
        return node, edge.reshape(n, n), sym[:m]

    def named_parameters(self, prefix: str):
        yield from self.encoder.named_parameters(f"{prefix}.enc")
        yield from self.node_head.named_parameters(f"{prefix}.node_head")
        yield from self.edge_head.named_parameters(f"{prefix}.edge_head")


class GraphBatch:
    """Several graphs fused into one block-diagonal computation.

    Produces the same per-graph numbers as encoding each graph alone (up to
    float summation order in the readout): off-block adjacency entries are
    exactly zero, node rows never mix across graphs, and the readout
    averages each graph's own span of rows.
    """

    def __init__(self, views: list[GraphView]):
        if not views:
            raise ValueError("empty batch")
        self.views = views
        self.sizes = [v.num_nodes for v in views]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.intp)
        self.total_nodes = int(self.offsets[-1])
        self.features = np.concatenate([v.features for v in views], axis=0)
        self.labels = np.array([v.label for v in views], dtype=np.intp)
        n = self.total_nodes
        adj = np.zeros((n, n), dtype=np.float32)
        readout = np.zeros((len(views), n), dtype=np.float32)
        src_parts, dst_parts = [], []
        for g, view in enumerate(views):
            off = self.offsets[g]
            a = view.adjacency
            adj[off : off + view.num_nodes, off : off + view.num_nodes] = a
            readout[g, off : off + view.num_nodes] = 1.0 / view.num_nodes
            s, d, _, _ = view.edge_arrays
            src_parts.append(s + off)
            dst_parts.append(d + off)
        self.adjacency = adj
        self.readout = readout
        self.src = np.concatenate(src_parts) if src_parts else np.zeros(0, np.intp)
        self.dst = np.concatenate(dst_parts) if dst_parts else np.zeros(0, np.intp)
        # directed-edge layout: per graph, forward orientations then reversed
        rev_parts = []
        base = 0
        self.edge_slices = []
        for view in views:
            m = view.num_edges
            rev_parts.append(np.concatenate([np.arange(m, 2 * m), np.arange(0, m)]) + base)
            self.edge_slices.append((base, m))
            base += 2 * m
        self.rev = np.concatenate(rev_parts).astype(np.intp) if rev_parts else np.zeros(0, np.intp)
        self.flat = self.src * n + self.dst
        self.num_directed = int(self.src.size)
        node_counts = np.array(self.sizes, dtype=np.float32)
        edge_counts = np.array([v.num_edges for v in views], dtype=np.float32)
        self.node_counts = node_counts.reshape(-1, 1)
        self.edge_counts = edge_counts.reshape(-1, 1)
        # per-graph averaging over the doubled (directed) edge list
        edge_seg = np.zeros((len(views), self.num_directed), dtype=np.float32)
        for g, (start, m) in enumerate(self.edge_slices):
            if m:
                edge_seg[g, start : start + 2 * m] = 0.5 / m
        self.edge_mean = edge_seg


class BatchMasks:
    """Masks for a GraphBatch: node (N,1), block edge matrix (N,N), and the
    directed edge values (2m_total, 1)."""

    def __init__(self, node_mask: Tensor, edge_mask: Tensor, edge_values: Tensor):
        self.node_mask = node_mask
        self.edge_mask = edge_mask
        self.edge_values = edge_values


def encode_batch(encoder: GinEncoder, batch: GraphBatch, masks: BatchMasks | None = None):
    """Run the encoder over a fused batch; returns (Z, per-graph embeddings)."""
    features = Tensor(batch.features)
    adjacency = Tensor(batch.adjacency)
    if masks is not None:
        h = T.mul(features, masks.node_mask)
        a_hat = T.mul(adjacency, masks.edge_mask)
    else:
        h = features
        a_hat = adjacency
    for mlp in encoder.layers:
        h = mlp(T.add(h, T.matmul(a_hat, h)))
    emb = T.matmul(Tensor(batch.readout), h)
    return h, emb


def encode_batch_raw(encoder: GinEncoder, batch: GraphBatch, node_mask=None, edge_mask=None):
    h = batch.features
    a_hat = batch.adjacency
    if node_mask is not None:
        h = h * node_mask
    if edge_mask is not None:
        a_hat = a_hat * edge_mask
    for mlp in encoder.layers:
        h = mlp.raw(h + a_hat @ h)
    return h, batch.readout @ h


def masknet_batch(net: MaskNet, batch: GraphBatch) -> BatchMasks:
    z, _ = encode_batch(net.encoder, batch)
    node_mask = T.sigmoid(net.node_head(z))
    n = batch.total_nodes
    if batch.num_directed == 0:
        return BatchMasks(
            node_mask,
            Tensor(np.zeros((n, n), np.float32)),
            Tensor(np.zeros((0, 1), np.float32)),
        )
    pair = T.concat((T.gather_rows(z, batch.src), T.gather_rows(z, batch.dst)), axis=1)
    raw = T.sigmoid(net.edge_head(pair))
    sym = T.mul(T.add(raw, T.gather_rows(raw, batch.rev)), 0.5)
    edge_mask = T.reshape(T.scatter_rows(sym, batch.flat, n * n), (n, n))
    return BatchMasks(node_mask, edge_mask, sym)


def masknet_batch_raw(net: MaskNet, batch: GraphBatch):
    z, _ = encode_batch_raw(net.encoder, batch)
    node = _sigmoid_np(net.node_head.raw(z))
    n = batch.total_nodes
    if batch.num_directed == 0:
        return node, np.zeros((n, n), node.dtype), np.zeros((0, 1), node.dtype)
    raw = _sigmoid_np(net.edge_head.raw(np.concatenate([z[batch.src], z[batch.dst]], axis=1)))
    sym = (raw + raw[batch.rev]) * 0.5
    edge = np.zeros((n * n, 1), dtype=node.dtype)
    edge[batch.flat] = sym
    return node, edge.reshape(n, n), sym


def ones_batch_masks(batch: GraphBatch) -> BatchMasks:
    ones_vals = np.ones((batch.num_directed, 1), np.float32)
    return BatchMasks(
        Tensor(np.ones((batch.total_nodes, 1), np.float32)),
        Tensor(batch.adjacency.copy()),
        Tensor(ones_vals),
    )


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def ones_mask(view: GraphView) -> MaskPair:
    """Identity masks: ones on nodes and on the adjacency support."""
    n = view.num_nodes
    return MaskPair(
        Tensor(np.ones((n, 1), dtype=np.float32)),
        Tensor(view.adjacency.copy()),
        Tensor(np.ones((view.num_edges, 1), dtype=np.float32)),
    )


def constant_mask(pair: MaskPair) -> MaskPair:
    """Detach a mask pair: same values, no gradient path."""
    return MaskPair(
        Tensor(pair.node_mask.data),
        Tensor(pair.edge_mask.data),
        Tensor(pair.edge_values.data),
    )


def save_checkpoint(path: str, named_arrays: dict[str, np.ndarray]):
    """Binary checkpoint: magic, tensor count, then per tensor the name,
    rank, dims (all little-endian u32) and float32 values."""
    buf = bytearray(CHECKPOINT_MAGIC)
    buf += struct.pack("<I", len(named_arrays))
    for name, arr in named_arrays.items():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        buf += struct.pack("<I", len(encoded))
        buf += encoded
        buf += struct.pack("<I", arr.ndim)
        for dim in arr.shape:
            buf += struct.pack("<I", dim)
        buf += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint (bad magic)")
    offset = len(CHECKPOINT_MAGIC)

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        values = struct.unpack_from(fmt, blob, offset)
        offset += size
        return values

    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = take("<I")
        shape = tuple(take(f"<{rank}I")) if rank else ()
        n_values = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n_values, offset=offset).reshape(shape)
        offset += 4 * n_values
        out[name] = arr.astype(np.float32)
    return out
