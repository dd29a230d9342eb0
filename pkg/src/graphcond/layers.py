"""Network layers: GCN over feature graphs and the MLP predictor.

Parameters live in plain ``dict[str, Tensor]`` containers so the optimizer and
checkpoint code can treat every parameter uniformly by name.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autograd as ag
from .autograd import Tensor
from .graphs import FeatureGraph, node_feature_matrix

LEAKY_SLOPE = 0.01


def kaiming_normal(rows: int, cols: int, rng: np.random.Generator, fan_in: int | None = None,
                   dtype=np.float64) -> np.ndarray:
    fan_in = cols if fan_in is None else fan_in
    return (rng.standard_normal((rows, cols)) * np.sqrt(2.0 / fan_in)).astype(dtype)


def normalize_adjacency(g: FeatureGraph) -> sp.csr_matrix:
    """Symmetric GCN propagation matrix D^-1/2 (A + I) D^-1/2 in CSR layout."""
    a = g.adjacency() + sp.identity(g.node_count, format="csr")
    d = np.asarray(a.sum(axis=1)).ravel()
    s = sp.diags(1.0 / np.sqrt(d))
    return (s @ a @ s).tocsr()


# ---------------------------------------------------------------- GCN

@dataclass
class GcnParams:
    tensors: dict[str, Tensor]
    dropout_p: float = 0.5

    @classmethod
    def init(cls, n_in: int, widths=(200, 100), rng=None, dtype=np.float64, dropout_p: float = 0.5):
        rng = np.random.default_rng(rng)
        h1, h2 = widths
        t = {
            "gcn1.weight": Tensor(kaiming_normal(n_in, h1, rng, fan_in=n_in, dtype=dtype), True),
            "gcn1.bias": Tensor(np.zeros(h1, dtype=dtype), True),
            "gcn2.weight": Tensor(kaiming_normal(h1, h2, rng, fan_in=h1, dtype=dtype), True),
            "gcn2.bias": Tensor(np.zeros(h2, dtype=dtype), True),
        }
        return cls(t, dropout_p)

    @property
    def n_in(self) -> int:
        return self.tensors["gcn1.weight"].shape[0]

    @property
    def out_width(self) -> int:
        return self.tensors["gcn2.weight"].shape[1]


def gcn_forward(adj_norm, node_feats, params: GcnParams, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
    """Two-layer GCN on one graph; returns node embeddings (N x K).

    ``adj_norm @ diag(v) @ W1`` is computed as a sparse product with the
    row-scaled weight, never as a dense N x N matrix.
    """
    t = params.tensors
    w1 = t["gcn1.weight"]
    if adj_norm.shape[0] != w1.shape[0] or node_feats.shape[0] != w1.shape[0]:
        raise ValueError(f"graph has {adj_norm.shape[0]} nodes, GCN expects {w1.shape[0]}")
    s = sp.csr_matrix(adj_norm @ node_feats).astype(w1.dtype)
    h = ag.relu(ag.spmm(s, w1) + t["gcn1.bias"])
    h = ag.dropout(h, params.dropout_p, rng, train)
    return ag.spmm(sp.csr_matrix(adj_norm).astype(w1.dtype), h @ t["gcn2.weight"]) + t["gcn2.bias"]


def global_mean_pool(node_embeddings: Tensor) -> Tensor:
    if node_embeddings.shape[0] == 0:
        raise ValueError("cannot pool an empty node set")
    return ag.mean(node_embeddings, axis=0)


class GraphBatch:
    """All D feature graphs packed for one batched GCN pass.

    ``scaled`` stacks the D blocks ``A_j diag(v_j)`` (each N x N) into a dense
    (D*N) x N matrix, so the first GCN layer of every graph is one GEMM.  Mean
    pooling commutes with the (linear) second layer, so each graph's pooled
    output is ``(1/N) 1^T A_j H_j W2 + b2``; ``pool`` holds the rows
    ``(1/N) 1^T A_j``.
    """

    def __init__(self, graphs: list[FeatureGraph], dtype=np.float64):
        if not graphs:
            raise ValueError("need at least one graph")
        n = graphs[0].node_count
        if any(g.node_count != n for g in graphs):
            raise ValueError("all feature graphs must have the same node count")
        self.n_nodes = n
        self.n_graphs = len(graphs)
        scaled = np.empty((len(graphs), n, n), dtype=dtype)
        pool = np.empty((len(graphs), 1, n), dtype=dtype)
        for j, g in enumerate(graphs):
            a = normalize_adjacency(g).toarray()
            scaled[j] = a * g.values[None, :]
            pool[j, 0] = a.sum(axis=0) / n
        self.scaled = scaled.reshape(len(graphs) * n, n)
        self.pool = pool

    def embed(self, params: GcnParams, train: bool = False,
              rng: np.random.Generator | None = None) -> Tensor:
        """Pooled embedding of every graph, shape (D, K)."""
        t = params.tensors
        if t["gcn1.weight"].shape[0] != self.n_nodes:
            raise ValueError(f"graphs have {self.n_nodes} nodes, GCN expects {params.n_in}")
        d, n = self.n_graphs, self.n_nodes
        h = ag.affine_relu_dropout(self.scaled, t["gcn1.weight"], t["gcn1.bias"],
                                   params.dropout_p, rng, train)
        h = ag.reshape(h, (d, n, h.shape[1]))
        pooled = ag.reshape(ag.matmul(Tensor(self.pool), h), (d, h.shape[2]))
        return pooled @ t["gcn2.weight"] + t["gcn2.bias"]


# ---------------------------------------------------------------- MLP

@dataclass
class MlpParams:
    """Everything of the predictor except the first-layer weight matrix."""

    tensors: dict[str, Tensor]
    buffers: dict[str, np.ndarray]
    widths: tuple[int, ...] = (100, 100, 10)
    dropout_p: float = 0.2
    leaky_slope: float = LEAKY_SLOPE
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    @classmethod
    def init(cls, n_classes: int, widths=(100, 100, 10), rng=None, dtype=np.float64,
             dropout_p: float = 0.2, leaky_slope: float = LEAKY_SLOPE):
        rng = np.random.default_rng(rng)
        t: dict[str, Tensor] = {}
        buf: dict[str, np.ndarray] = {}
        for i, w in enumerate(widths, start=1):
            if i > 1:
                t[f"fc{i}.weight"] = Tensor(kaiming_normal(w, widths[i - 2], rng, dtype=dtype), True)
            t[f"fc{i}.bias"] = Tensor(np.zeros(w, dtype=dtype), True)
            t[f"bn{i}.weight"] = Tensor(np.ones(w, dtype=dtype), True)
            t[f"bn{i}.bias"] = Tensor(np.zeros(w, dtype=dtype), True)
            buf[f"bn{i}.running_mean"] = np.zeros(w, dtype=dtype)
            buf[f"bn{i}.running_var"] = np.ones(w, dtype=dtype)
        t["out.weight"] = Tensor(kaiming_normal(n_classes, widths[-1], rng, dtype=dtype), True)
        t["out.bias"] = Tensor(np.zeros(n_classes, dtype=dtype), True)
        return cls(t, buf, tuple(widths), dropout_p, leaky_slope)

    @property
    def n_classes(self) -> int:
        return self.tensors["out.bias"].shape[0]

    def copy(self) -> "MlpParams":
        return MlpParams({k: Tensor(v.data.copy(), v.requires_grad) for k, v in self.tensors.items()},
                         {k: v.copy() for k, v in self.buffers.items()}, self.widths, self.dropout_p,
                         self.leaky_slope, self.bn_momentum, self.bn_eps)


def mlp_forward(x, first_layer: Tensor, params: MlpParams, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
    """Class probabilities (B x C).

    Each hidden block is linear -> LeakyReLU -> batch norm -> dropout; the
    output layer is linear -> softmax.
    """
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=first_layer.dtype))
    if x.shape[1] != first_layer.shape[1]:
        raise ValueError(f"input has {x.shape[1]} features, first layer expects {first_layer.shape[1]}")
    t, buf = params.tensors, params.buffers
    h = x
    for i in range(1, len(params.widths) + 1):
        w = first_layer if i == 1 else t[f"fc{i}.weight"]
        h = ag.matmul(h, ag.transpose(w)) + t[f"fc{i}.bias"]
        h = ag.leaky_relu(h, params.leaky_slope)
        h = ag.batch_norm(h, t[f"bn{i}.weight"], t[f"bn{i}.bias"], buf[f"bn{i}.running_mean"],
                          buf[f"bn{i}.running_var"], train, params.bn_momentum, params.bn_eps)
        h = ag.dropout(h, params.dropout_p, rng, train)
    logits = ag.matmul(h, ag.transpose(t["out.weight"])) + t["out.bias"]
    return ag.softmax(logits)


def class_weights(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Balanced weights ``N / (C * N_c)``; absent classes get weight 0."""
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    w = np.zeros(n_classes)
    present = counts > 0
    w[present] = len(labels) / (n_classes * counts[present])
    return w


weighted_cross_entropy = ag.weighted_cross_entropy
