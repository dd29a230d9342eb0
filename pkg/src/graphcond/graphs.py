"""Per-feature sample graphs: one graph per column, one node per training sample.

Three edge builders are provided: K-nearest-neighbour on the scalar feature
value, sparse relative distance (SRD: threshold + Bernoulli accept/reject +
degree cap) and Erdos-Renyi style random graphs with a Gaussian edge fraction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

FORMAT_VERSION = 1


@dataclass
class FeatureGraph:
    node_count: int
    values: np.ndarray
    edges: np.ndarray  # (E, 2) int64, rows (u, v) with u < v, lexicographically sorted

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.edges = _canonical_edges(np.asarray(self.edges, dtype=np.int64).reshape(-1, 2))
        if self.values.shape != (self.node_count,):
            raise ValueError("values must have one entry per node")
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= self.node_count):
            raise ValueError("edge endpoint out of range")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.node_count)

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency in CSR layout."""
        n = self.node_count
        u, v = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(u))
        return sp.csr_matrix((data, (np.r_[u, v], np.r_[v, u])), shape=(n, n))

    def neighbours(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.node_count)]
        for u, v in self.edges.tolist():
            nbrs[u].append(v)
            nbrs[v].append(u)
        return nbrs


@dataclass
class GraphStats:
    degree_mean: float
    degree_std: float
    edge_fraction: float


def _canonical_edges(pairs: np.ndarray) -> np.ndarray:
    if pairs.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    keep = lo != hi
    e = np.unique(np.stack([lo[keep], hi[keep]], axis=1), axis=0)
    return e.astype(np.int64).reshape(-1, 2)


def node_feature_matrix(g: FeatureGraph) -> sp.csr_matrix:
    """Diagonal matrix whose row ``i`` is the one-hot slot of node ``i`` holding its value."""
    return sp.diags(g.values, format="csr")


# ---------------------------------------------------------------- builders

def knn_candidates(values: np.ndarray, k: int) -> np.ndarray:
    """(N, k) indices of each node's k closest other nodes; ties go to the lower index."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n <= k:
        raise ValueError(f"KNN graph needs more than k={k} nodes, got {n}")
    dist = np.abs(values[:, None] - values[None, :])
    np.fill_diagonal(dist, np.inf)
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def build_knn_graph(values, k: int = 5) -> FeatureGraph:
    values = np.asarray(values, dtype=np.float64)
    cand = knn_candidates(values, k)
    src = np.repeat(np.arange(len(values)), k)
    return FeatureGraph(len(values), values, np.stack([src, cand.ravel()], axis=1))


def srd_threshold(values: np.ndarray, rel_dist: float = 0.05) -> float:
    p5, p95 = np.percentile(values, [5, 95])  # linear interpolation
    return rel_dist * abs(p95 - p5)


def srd_candidates(values: np.ndarray, rel_dist: float = 0.05) -> list[np.ndarray]:
    values = np.asarray(values, dtype=np.float64)
    dist = srd_threshold(values, rel_dist)
    close = np.abs(values[:, None] - values[None, :]) <= dist
    np.fill_diagonal(close, False)
    return [np.flatnonzero(row) for row in close]


def build_srd_graph(values, rel_dist: float = 0.05, max_degree: int = 25,
                    rng: np.random.Generator | int | None = None) -> FeatureGraph:
    """Sparse relative distance graph.

    Every node runs one Bernoulli trial with success probability
    ``|candidates| / N``; a success links the node to all of its candidates.
    Once all trials are done, nodes above ``max_degree`` lose uniformly chosen
    incident edges (processed in node order) until they are at the cap.
    """
    rng = np.random.default_rng(rng)
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n < 2:
        raise ValueError("SRD graph needs at least 2 nodes")
    cands = srd_candidates(values, rel_dist)
    sizes = np.array([len(c) for c in cands])
    accepted = rng.random(n) < sizes / n
    pairs = [np.stack([np.full(len(cands[u]), u), cands[u]], axis=1)
             for u in np.flatnonzero(accepted) if len(cands[u])]
    edges = _canonical_edges(np.concatenate(pairs)) if pairs else np.zeros((0, 2), np.int64)
    edges = _prune_to_degree(edges, n, max_degree, rng)
    return FeatureGraph(n, values, edges)


def _prune_to_degree(edges: np.ndarray, n: int, cap: int, rng: np.random.Generator) -> np.ndarray:
    alive = np.ones(len(edges), dtype=bool)
    incident: list[list[int]] = [[] for _ in range(n)]
    for i, (u, v) in enumerate(edges.tolist()):
        incident[u].append(i)
        incident[v].append(i)
    for u in range(n):
        live = [i for i in incident[u] if alive[i]]
        excess = len(live) - cap
        if excess > 0:
            drop = rng.choice(len(live), size=excess, replace=False)
            alive[np.asarray(live)[drop]] = False
    return edges[alive]


def sample_edge_fraction(rng: np.random.Generator, mu: float = 0.08, sigma: float = 0.03) -> float:
    return float(np.clip(rng.normal(mu, sigma), 0.0, 1.0))


def build_random_graph(n: int, mu: float = 0.08, sigma: float = 0.03,
                       rng: np.random.Generator | int | None = None,
                       values=None) -> FeatureGraph:
    """Uniform random graph with ``round(p * n(n-1)/2)`` edges, ``p ~ N(mu, sigma)`` clamped to [0, 1]."""
    rng = np.random.default_rng(rng)
    if n < 2:
        raise ValueError("random graph needs at least 2 nodes")
    p = sample_edge_fraction(rng, mu, sigma)
    total = n * (n - 1) // 2
    m = int(round(p * total))
    iu, iv = np.triu_indices(n, k=1)
    pick = np.sort(rng.choice(total, size=m, replace=False))
    vals = np.zeros(n) if values is None else np.asarray(values, dtype=np.float64)
    return FeatureGraph(n, vals, np.stack([iu[pick], iv[pick]], axis=1))


def graph_stats(g: FeatureGraph) -> GraphStats:
    if g.node_count < 2:
        raise ValueError("graph statistics need at least 2 nodes")
    deg = g.degrees()
    total = g.node_count * (g.node_count - 1) / 2
    return GraphStats(float(deg.mean()), float(deg.std()), 100.0 * g.n_edges / total)


def summarize(graphs: list[FeatureGraph]) -> GraphStats:
    """Pooled statistics over a list of graphs (degrees of all nodes, mean edge fraction)."""
    deg = np.concatenate([g.degrees() for g in graphs])
    frac = np.mean([graph_stats(g).edge_fraction for g in graphs])
    return GraphStats(float(deg.mean()), float(deg.std()), float(frac))


# ---------------------------------------------------------------- per-dataset construction

@dataclass
class GraphConfig:
    kind: str = "knn"  # knn | srd | random
    k: int = 5
    rel_dist: float = 0.05
    max_degree: int = 25
    mu: float = 0.08
    sigma: float = 0.03

    def __post_init__(self):
        if self.kind not in ("knn", "srd", "random"):
            raise ValueError(f"unknown graph kind {self.kind!r}")


def feature_rng(seed: int, j: int) -> np.random.Generator:
    return np.random.default_rng([seed, j])


def build_feature_graphs(x_train: np.ndarray, config: GraphConfig | None = None,
                         seed: int = 0) -> list[FeatureGraph]:
    """One graph per column of the (normalised) training matrix."""
    config = config or GraphConfig()
    x = np.asarray(x_train, dtype=np.float64)
    n, d = x.shape
    if config.kind == "knn":
        if n <= config.k:
            raise ValueError(f"KNN graph needs more than k={config.k} nodes, got {n}")
        # Vectorised over blocks of features; identical to build_knn_graph column by column.
        idx = np.arange(n)
        src = np.repeat(idx, config.k)
        out = []
        for start in range(0, d, 256):
            cols = x[:, start:start + 256].T
            dist = np.abs(cols[:, :, None] - cols[:, None, :])
            dist[:, idx, idx] = np.inf
            cand = np.argsort(dist, axis=2, kind="stable")[:, :, :config.k]
            out.extend(FeatureGraph(n, x[:, start + j], np.stack([src, cand[j].ravel()], axis=1))
                       for j in range(len(cols)))
        return out
    if config.kind == "srd":
        return [build_srd_graph(x[:, j], config.rel_dist, config.max_degree, feature_rng(seed, j))
                for j in range(d)]
    return [build_random_graph(n, config.mu, config.sigma, feature_rng(seed, j), values=x[:, j])
            for j in range(d)]


def save_bundle(graphs: list[FeatureGraph], path, config: GraphConfig | None = None,
                seed: int = 0, meta: dict | None = None) -> None:
    config = config or GraphConfig()
    doc = {
        "format_version": FORMAT_VERSION,
        "config": vars(config),
        "seed": seed,
        "meta": meta or {},
        "graphs": [{"node_count": g.node_count, "values": g.values.tolist(),
                    "edges": g.edges.tolist()} for g in graphs],
    }
    Path(path).write_text(json.dumps(doc))


def load_bundle(path, with_meta: bool = False):
    """``(graphs, config, seed)``, plus the free-form ``meta`` dict when ``with_meta``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported graph bundle version {doc.get('format_version')!r}")
    graphs = [FeatureGraph(g["node_count"], np.array(g["values"], dtype=np.float64),
                           np.array(g["edges"], dtype=np.int64).reshape(-1, 2)) for g in doc["graphs"]]
    if with_meta:
        return graphs, GraphConfig(**doc["config"]), doc["seed"], doc.get("meta", {})
    return graphs, GraphConfig(**doc["config"]), doc["seed"]
