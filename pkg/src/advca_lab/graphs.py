"""Synthetic motif-classification graphs with controllable covariate splits.

Every graph is one base topology (wheel, tree, ladder, star, path) joined
to one 5-node motif (house, cycle, crane) by a single bridge edge. The
class label is a function of the motif alone; the base topology or the
graph size acts as the environment and carries the distribution shift.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import DataError

BASE_KINDS = ("wheel", "tree", "ladder", "star", "path")
MOTIF_KINDS = ("house", "cycle", "crane")
MOTIF_LABELS = {"house": 0, "cycle": 1, "crane": 2}
MOTIF_SIZE = 5

# Crane is fixed project-wide: triangle 0-1-2 with a pendant path 2-3-4.
CRANE_EDGES = ((0, 1), (0, 2), (1, 2), (2, 3), (3, 4))

FEATURE_NOISE = 0.1
SIZE_BUCKETS = {"small": (10, 20), "middle": (30, 40), "large": (60, 90)}


@dataclass(eq=False)
class Graph:
    """Undirected attributed graph with evaluation-only causal flags."""

    id: int
    num_nodes: int
    edges: list[tuple[int, int]]
    features: np.ndarray  # (num_nodes, f) float32
    label: int
    env: str
    causal_nodes: list[bool]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.id == other.id
            and self.num_nodes == other.num_nodes
            and self.edges == other.edges
            and self.label == other.label
            and self.env == other.env
            and self.causal_nodes == other.causal_nodes
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )


class GraphView:
    """Model-facing projection of a graph: structure, features, label.

    Deliberately omits the environment tag and causal flags so model code
    cannot read them; adjacency and edge index arrays are cached here.
    """

    __slots__ = ("num_nodes", "edges", "features", "label", "_adjacency", "_edge_arrays")

    def __init__(self, num_nodes: int, edges, features: np.ndarray, label: int):
        self.num_nodes = num_nodes
        self.edges = list(edges)
        self.features = np.asarray(features, dtype=np.float32)
        self.label = int(label)
        self._adjacency = None
        self._edge_arrays = None

    @classmethod
    def of(cls, graph: "Graph | GraphView") -> "GraphView":
        if isinstance(graph, GraphView):
            return graph
        return cls(graph.num_nodes, graph.edges, graph.features, graph.label)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def adjacency(self) -> np.ndarray:
        """Dense symmetric 0/1 adjacency without self-loops, float32."""
        if self._adjacency is None:
            n = self.num_nodes
            a = np.zeros((n, n), dtype=np.float32)
            for i, j in self.edges:
                a[i, j] = 1.0
                a[j, i] = 1.0
            self._adjacency = a
        return self._adjacency

    @property
    def edge_arrays(self):
        """Directed edge index arrays: (src, dst, reverse_perm, flat_positions).

        The first ``num_edges`` entries are the stored ``i < j`` orientation,
        the second half the reversed one; ``reverse_perm[k]`` is the index of
        the opposite orientation and ``flat_positions`` addresses row-major
        cells of the n-by-n adjacency.
        """
        if self._edge_arrays is None:
            m = len(self.edges)
            n = self.num_nodes
            if m:
                ij = np.asarray(self.edges, dtype=np.intp)
                src = np.concatenate([ij[:, 0], ij[:, 1]])
                dst = np.concatenate([ij[:, 1], ij[:, 0]])
            else:
                src = np.zeros(0, dtype=np.intp)
                dst = np.zeros(0, dtype=np.intp)
            rev = np.concatenate([np.arange(m, 2 * m), np.arange(0, m)]).astype(np.intp)
            flat = src * n + dst
            self._edge_arrays = (src, dst, rev, flat)
        return self._edge_arrays


@dataclass
class DatasetSplit:
    train: list[Graph]
    val: list[Graph]
    test: list[Graph]
    shift_kind: str


@dataclass(frozen=True)
class EnvSpec:
    """One environment of a dataset: tag, volume, and graph geometry."""

    name: str
    per_class: int
    base_kinds: tuple[str, ...]
    total_nodes: tuple[int, int]  # inclusive range of motif + base node counts


@dataclass(frozen=True)
class DatasetConfig:
    shift_kind: str
    feature_dim: int
    envs: tuple[EnvSpec, ...]

    def __post_init__(self):
        if self.shift_kind not in ("base", "size"):
            raise ValueError(f"unknown shift kind {self.shift_kind!r}")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        for env in self.envs:
            if env.per_class < 1:
                raise ValueError(f"environment {env.name!r} needs at least one graph per class")
            lo, hi = env.total_nodes
            if lo > hi or lo < MOTIF_SIZE + 2:
                raise ValueError(f"environment {env.name!r} has an invalid size range {env.total_nodes}")


def base_shift_config(
    train_per_env_class: int = 100,
    val_per_env_class: int = 50,
    test_per_env_class: int = 50,
    total_nodes: tuple[int, int] = (12, 18),
    feature_dim: int = 4,
) -> DatasetConfig:
    """Environment = base topology; star validates, path tests."""
    envs = tuple(
        EnvSpec(kind, count, (kind,), total_nodes)
        for kind, count in (
            ("wheel", train_per_env_class),
            ("tree", train_per_env_class),
            ("ladder", train_per_env_class),
            ("star", val_per_env_class),
            ("path", test_per_env_class),
        )
    )
    return DatasetConfig("base", feature_dim, envs)


def size_shift_config(
    train_per_env_class: int = 300,
    val_per_env_class: int = 50,
    test_per_env_class: int = 50,
    buckets: dict[str, tuple[int, int]] | None = None,
    feature_dim: int = 4,
) -> DatasetConfig:
    """Environment = node-count bucket; base topologies are mixed freely."""
    buckets = dict(SIZE_BUCKETS if buckets is None else buckets)
    counts = {"small": train_per_env_class, "middle": val_per_env_class, "large": test_per_env_class}
    envs = tuple(EnvSpec(name, counts[name], BASE_KINDS, buckets[name]) for name in ("small", "middle", "large"))
    return DatasetConfig("size", feature_dim, envs)


def make_base_graph(kind: str, size_param: int, rng: np.random.Generator) -> tuple[int, list[tuple[int, int]]]:
    """Build one connected base topology; returns (num_nodes, edges)."""
    n = int(size_param)
    if kind == "wheel":
        if n < 4:
            raise ValueError(f"wheel needs at least 4 nodes, got {n}")
        rim = list(range(1, n))
        edges = [(0, i) for i in rim]
        edges += [(rim[i], rim[(i + 1) % len(rim)]) for i in range(len(rim))]
    elif kind == "tree":
        if n < 2:
            raise ValueError(f"tree needs at least 2 nodes, got {n}")
        edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    elif kind == "ladder":
        if n < 4 or n % 2:
            raise ValueError(f"ladder needs an even node count >= 4, got {n}")
        k = n // 2
        edges = [(i, i + 1) for i in range(k - 1)]
        edges += [(k + i, k + i + 1) for i in range(k - 1)]
        edges += [(i, k + i) for i in range(k)]
    elif kind == "star":
        if n < 2:
            raise ValueError(f"star needs at least 2 nodes, got {n}")
        edges = [(0, i) for i in range(1, n)]
    elif kind == "path":
        if n < 2:
            raise ValueError(f"path needs at least 2 nodes, got {n}")
        edges = [(i, i + 1) for i in range(n - 1)]
    else:
        raise ValueError(f"unknown base kind {kind!r}")
    return n, _canonical(edges)


def make_motif(kind: str, rng: np.random.Generator) -> tuple[int, list[tuple[int, int]]]:
    """Build one 5-node motif; returns (num_nodes, edges)."""
    if kind == "house":
        edges = [(0, 1), (1, 2), (2, 3), (0, 3), (0, 4), (1, 4)]
    elif kind == "cycle":
        edges = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]
    elif kind == "crane":
        edges = list(CRANE_EDGES)
    else:
        raise ValueError(f"unknown motif kind {kind!r}")
    return MOTIF_SIZE, _canonical(edges)


def _canonical(edges) -> list[tuple[int, int]]:
    return sorted((min(i, j), max(i, j)) for i, j in edges)


def _legal_base_size(kind: str, size: int) -> int:
    if kind == "wheel":
        return max(size, 4)
    if kind == "ladder":
        size = max(size, 4)
        return size - 1 if size % 2 else size
    return max(size, 2)


def _assemble(gid, base_kind, base_size, motif_kind, feature_dim, env, rng) -> Graph:
    base_n, base_edges = make_base_graph(base_kind, base_size, rng)
    motif_n, motif_edges = make_motif(motif_kind, rng)
    n = base_n + motif_n
    edges = list(base_edges)
    edges += [(i + base_n, j + base_n) for i, j in motif_edges]
    bridge_base = int(rng.integers(0, base_n))
    bridge_motif = base_n + int(rng.integers(0, motif_n))
    edges.append((bridge_base, bridge_motif))
    features = np.ones((n, feature_dim), dtype=np.float32)
    features += rng.uniform(-FEATURE_NOISE, FEATURE_NOISE, size=(n, feature_dim)).astype(np.float32)
    causal = [False] * base_n + [True] * motif_n
    return Graph(
        id=gid,
        num_nodes=n,
        edges=_canonical(edges),
        features=features,
        label=MOTIF_LABELS[motif_kind],
        env=env,
        causal_nodes=causal,
    )


def generate_motif_dataset(config: DatasetConfig, seed: int) -> list[Graph]:
    """Generate every configured environment; deterministic given the seed."""
    rng = np.random.default_rng(seed)
    graphs: list[Graph] = []
    gid = 0
    for env in config.envs:
        lo, hi = env.total_nodes
        for motif_kind in MOTIF_KINDS:
            for _ in range(env.per_class):
                base_kind = env.base_kinds[int(rng.integers(0, len(env.base_kinds)))]
                total = int(rng.integers(lo, hi + 1))
                base_size = _legal_base_size(base_kind, total - MOTIF_SIZE)
                graphs.append(_assemble(gid, base_kind, base_size, motif_kind, config.feature_dim, env.name, rng))
                gid += 1
    return graphs


def split_covariate(graphs: list[Graph], shift_kind: str) -> DatasetSplit:
    """Partition by environment tag into the held-out covariate split."""
    if shift_kind == "base":
        groups = {"train": [], "val": [], "test": []}
        roles = {"wheel": "train", "tree": "train", "ladder": "train", "star": "val", "path": "test"}
        for g in graphs:
            role = roles.get(g.env)
            if role is None:
                raise DataError(f"graph {g.id} has environment {g.env!r}, not a base topology")
            groups[role].append(g)
    elif shift_kind == "size":
        groups = {"train": [], "val": [], "test": []}
        roles = {"small": "train", "middle": "val", "large": "test"}
        for g in graphs:
            role = roles.get(g.env)
            if role is None:
                raise DataError(f"graph {g.id} has environment {g.env!r}, not a size bucket")
            groups[role].append(g)
    else:
        raise DataError(f"unknown shift kind {shift_kind!r}")
    for name, part in groups.items():
        if not part:
            raise DataError(f"no graphs for the {name} split")
    split = DatasetSplit(groups["train"], groups["val"], groups["test"], shift_kind)
    if shift_kind == "size":
        max_train = max(g.num_nodes for g in split.train)
        min_val = min(g.num_nodes for g in split.val)
        min_test = min(g.num_nodes for g in split.test)
        if not (max_train < min_val <= min_test):
            raise DataError(
                f"size buckets overlap: max train {max_train}, min val {min_val}, min test {min_test}"
            )
    return split


def save_jsonl(graphs: list[Graph], path: str):
    """Write one JSON object per graph; the write is temp-then-rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            for g in graphs:
                record = {
                    "id": g.id,
                    "num_nodes": g.num_nodes,
                    "edges": [[i, j] for i, j in g.edges],
                    "features": [[float(x) for x in row] for row in g.features],
                    "label": g.label,
                    "env": g.env,
                    "causal_nodes": list(g.causal_nodes),
                }
                fh.write(json.dumps(record, separators=(",", ":")) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_jsonl(path: str) -> list[Graph]:
    graphs: list[Graph] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                graphs.append(_graph_from_record(record))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
    return graphs


def _graph_from_record(record: dict) -> Graph:
    n = int(record["num_nodes"])
    edges = [(int(i), int(j)) for i, j in record["edges"]]
    for i, j in edges:
        if not (0 <= i < j < n):
            raise ValueError(f"bad edge ({i}, {j}) for {n} nodes")
    if len(set(edges)) != len(edges):
        raise ValueError("duplicate edges")
    features = np.asarray(record["features"], dtype=np.float32)
    if features.ndim != 2 or features.shape[0] != n:
        raise ValueError(f"features shape {features.shape} does not match {n} nodes")
    causal = [bool(x) for x in record["causal_nodes"]]
    if len(causal) != n:
        raise ValueError("causal flag count does not match node count")
    return Graph(
        id=int(record["id"]),
        num_nodes=n,
        edges=edges,
        features=features,
        label=int(record["label"]),
        env=str(record["env"]),
        causal_nodes=causal,
    )


def is_connected(num_nodes: int, edges) -> bool:
    if num_nodes <= 1:
        return True
    adj = [[] for _ in range(num_nodes)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == num_nodes
