"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from advca_lab.graphs import Graph, GraphView
from advca_lab.tensor import Tape

FD_STEP = 1e-3


def finite_difference_gradients(loss_fn, named_params, h: float = FD_STEP) -> dict[str, np.ndarray]:
    """Central finite differences of a scalar loss over every parameter entry.

    Independent of the reverse-mode path: only forward evaluations are used,
    accumulated at the parameters' own (float64) precision.
    """
    grads = {}
    for name, p in named_params:
        fd = np.zeros_like(p.data)
        it = np.nditer(p.data, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = p.data[ix]
            p.data[ix] = orig + h
            plus = loss_fn()
            p.data[ix] = orig - h
            minus = loss_fn()
            p.data[ix] = orig
            fd[ix] = (plus - minus) / (2.0 * h)
        grads[name] = fd
    return grads


def relative_error(fd: np.ndarray, analytic: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(fd)), float(np.linalg.norm(analytic)), 1e-12)
    return float(np.linalg.norm(fd - analytic)) / scale


def kink_margin(root) -> float:
    """Smallest |input| over the piecewise-linear ops recorded on the tape.

    Central differences are only a valid derivative oracle when no ReLU or
    absolute-value kink sits inside the stencil; callers resample any test
    case whose margin is below a safe multiple of the step size.
    """
    margin = float("inf")
    for node in Tape.trace(root):
        if node.op in ("relu", "abs") and node._parents:
            x = node._parents[0].data
            if x.size:
                margin = min(margin, float(np.min(np.abs(x))))
    return margin


def cast_params_float64(named_params):
    for _, p in named_params:
        p.data = p.data.astype(np.float64)


def collect_grads(named_params) -> dict[str, np.ndarray]:
    return {name: p.grad.copy() for name, p in named_params}


def random_connected_graph(rng: np.random.Generator, max_nodes: int = 8, feature_dim: int = 3) -> Graph:
    """Small random connected graph with features spread over [-2, 2]."""
    n = int(rng.integers(3, max_nodes + 1))
    edges = {(int(rng.integers(0, i)), i) for i in range(1, n)}
    extra = int(rng.integers(0, n))
    for _ in range(extra):
        i, j = int(rng.integers(0, n)), int(rng.integers(0, n))
        if i != j:
            edges.add((min(i, j), max(i, j)))
    features = rng.uniform(-2.0, 2.0, size=(n, feature_dim)).astype(np.float32)
    causal = [bool(rng.integers(0, 2)) for _ in range(n)]
    return Graph(
        id=0,
        num_nodes=n,
        edges=sorted(edges),
        features=features,
        label=int(rng.integers(0, 3)),
        env="probe",
        causal_nodes=causal,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def as_view(graph: Graph) -> GraphView:
    return GraphView.of(graph)
