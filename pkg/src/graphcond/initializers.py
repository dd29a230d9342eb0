"""First-layer initialisation baselines: Kaiming, PCA, NMF and Weisfeiler-Lehman.

The three structured schemes produce one K-dimensional embedding per
feature; the stacked (K x D) matrix is then row-centred and rescaled to the
Kaiming standard deviation before it is used as the MLP's first layer.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .graphs import FeatureGraph
from .model import ConditionedModel, MixingSchedule, TrainConfig, TrainedModel, train
from .autograd import Tensor

SCHEMES = ("kaiming", "pca", "nmf", "wl")


class NMFDivergenceError(RuntimeError):
    pass


@dataclass
class InitScheme:
    kind: str = "kaiming"
    width: int = 100
    wl_iterations: int = 3
    nmf_iterations: int = 500
    seed: int = 0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ValueError(f"unknown init scheme {self.kind!r}; expected one of {SCHEMES}")
        if self.width < 1 or self.wl_iterations < 0 or self.nmf_iterations < 1:
            raise ValueError("width, wl_iterations and nmf_iterations must be positive")


def kaiming_init(rows: int, cols: int, rng=None) -> np.ndarray:
    """I.i.d. normal entries with std sqrt(2 / cols)."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    rng = np.random.default_rng(rng)
    return rng.standard_normal((rows, cols)) * np.sqrt(2.0 / cols)


def rescale_to_kaiming(w, rng=None) -> np.ndarray:
    """Centre every row, then scale it to population std sqrt(2 / cols).

    Rows that are constant after centring carry no direction to rescale and
    are replaced by a fresh Kaiming row (itself centred and rescaled).
    """
    w = np.array(w, dtype=np.float64)
    rows, cols = w.shape
    target = np.sqrt(2.0 / cols)
    w -= w.mean(axis=1, keepdims=True)
    std = w.std(axis=1)
    dead = ~(std > 1e-12 * (1.0 + np.abs(w).max(axis=1)))
    if dead.any():
        rng = np.random.default_rng(rng)
        fresh = kaiming_init(int(dead.sum()), cols, rng) if cols > 1 else np.zeros((int(dead.sum()), cols))
        fresh -= fresh.mean(axis=1, keepdims=True)
        w[dead] = fresh
        std = w.std(axis=1)
    ok = std > 0
    w[ok] *= (target / std[ok])[:, None]
    return w


# ---------------------------------------------------------------- PCA

def pca_embeddings(x_train, k: int = 100, rng=None) -> tuple[np.ndarray, int]:
    """Top-``k`` right singular vectors of the column-centred matrix, as rows.

    Column j of the result is feature j's embedding.  When the matrix has
    rank below ``k`` the missing rows are Kaiming draws; the second return
    value is how many rows were padded.
    """
    x = np.asarray(x_train, dtype=np.float64)
    xc = x - x.mean(axis=0)
    if not np.any(xc):
        raise ValueError("PCA needs a matrix with at least one non-constant column")
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    rank = int(np.sum(s > s[0] * max(xc.shape) * np.finfo(float).eps))
    take = min(k, rank)
    out = np.empty((k, x.shape[1]))
    out[:take] = vt[:take]
    if take < k:
        out[take:] = kaiming_init(k - take, x.shape[1], rng)
    return out, k - take


def pca_init(x_train, k: int = 100, rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    emb, _ = pca_embeddings(x_train, k, rng)
    return rescale_to_kaiming(emb, rng)


# ---------------------------------------------------------------- NMF

def nmf_objective(x, w, h) -> float:
    return float(np.sum((x - w @ h) ** 2))


def nmf(x, k: int, iterations: int = 500, rng=None, tol: float = 1e-10,
        eps: float = 1e-12) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lee-Seung multiplicative updates for ``min ||X - WH||_F^2`` with W, H >= 0.

    Returns ``(W, H, objective trace)``; the trace has one entry per
    half-update (H then W).  An increase larger than ``tol`` (relative) raises
    :class:`NMFDivergenceError`.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("NMF input must be non-negative")
    rng = np.random.default_rng(rng)
    n, d = x.shape
    scale = np.sqrt(max(x.mean(), eps) / k)
    w = rng.uniform(0.1, 1.0, (n, k)) * scale
    h = rng.uniform(0.1, 1.0, (k, d)) * scale
    trace = [nmf_objective(x, w, h)]
    for it in range(iterations):
        h *= (w.T @ x) / (w.T @ w @ h + eps)
        trace.append(nmf_objective(x, w, h))
        w *= (x @ h.T) / (w @ (h @ h.T) + eps)
        trace.append(nmf_objective(x, w, h))
        for prev, cur in ((trace[-3], trace[-2]), (trace[-2], trace[-1])):
            if cur > prev + tol * max(prev, 1.0):
                raise NMFDivergenceError(f"NMF objective increased at iteration {it}: {prev} -> {cur}")
    return w, h, trace


def nmf_embeddings(x_train, k: int = 100, iterations: int = 500, rng=None) -> np.ndarray:
    """H of a rank-``k`` NMF of the column-min-shifted matrix; column j embeds feature j."""
    x = np.asarray(x_train, dtype=np.float64)
    shifted = x - x.min(axis=0)
    _, h, _ = nmf(shifted, k, iterations, rng)
    return h


def nmf_init(x_train, k: int = 100, iterations: int = 500, rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    return rescale_to_kaiming(nmf_embeddings(x_train, k, iterations, rng), rng)


# ---------------------------------------------------------------- Weisfeiler-Lehman

def _colour_hash(own: int, neighbours: list[int]) -> int:
    payload = ",".join(map(str, [own, *sorted(neighbours)])).encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def wl_colours(g: FeatureGraph, iterations: int = 3) -> np.ndarray:
    """Final WL colour of every node.

    Colours start uniform; each round a node's new colour is a hash of its own
    colour and the sorted multiset of its neighbours' colours.  Hashing (not a
    per-graph relabelling table) keeps colours comparable across graphs and
    independent of node numbering.
    """
    nbrs = g.neighbours()
    colours = [0] * g.node_count
    for _ in range(iterations):
        colours = [_colour_hash(colours[u], [colours[v] for v in nbrs[u]]) for u in range(g.node_count)]
    return np.array(colours, dtype=np.uint64)


def wl_histograms(graphs: list[FeatureGraph], k: int = 100, iterations: int = 3) -> np.ndarray:
    """(k x D) matrix of per-graph colour histograms, each column summing to 1.

    Every distinct final colour across all graphs gets a real value: its rank
    in sorted hash order.  The node vector of ranks is histogrammed into ``k``
    equal bins over the shared range of ranks.
    """
    if not graphs:
        raise ValueError("need at least one graph")
    colours = [wl_colours(g, iterations) for g in graphs]
    palette = np.unique(np.concatenate(colours))
    hi = max(len(palette) - 1, 1)
    out = np.empty((k, len(graphs)))
    for j, c in enumerate(colours):
        ranks = np.searchsorted(palette, c).astype(np.float64)
        counts, _ = np.histogram(ranks, bins=k, range=(0.0, float(hi)))
        out[:, j] = counts / counts.sum()
    return out


def wl_init(graphs: list[FeatureGraph], k: int = 100, iterations: int = 3, rng=None) -> np.ndarray:
    return rescale_to_kaiming(wl_histograms(graphs, k, iterations), rng)


# ---------------------------------------------------------------- dispatch + training

def first_layer_init(scheme: InitScheme, x_train, graphs: list[FeatureGraph] | None = None) -> np.ndarray:
    """(width x D) first-layer matrix for ``scheme``, computed from training data only."""
    rng = np.random.default_rng(scheme.seed)
    x = np.asarray(x_train, dtype=np.float64)
    if scheme.kind == "kaiming":
        return kaiming_init(scheme.width, x.shape[1], rng)
    if scheme.kind == "pca":
        emb, padded = pca_embeddings(x, scheme.width, rng)
        scheme.info["padded_rows"] = padded
        return rescale_to_kaiming(emb, rng)
    if scheme.kind == "nmf":
        return nmf_init(x, scheme.width, scheme.nmf_iterations, rng)
    if graphs is None:
        raise ValueError("the WL scheme needs feature graphs")
    return wl_init(graphs, scheme.width, scheme.wl_iterations, rng)


def mlp_model(first_layer, n_classes: int, seed: int = 0, dtype=np.float32,
              widths=(100, 100, 10), **kwargs) -> ConditionedModel:
    """A plain MLP: a model without GNN whose ``W_scratch`` holds ``first_layer``."""
    first_layer = np.asarray(first_layer)
    model = ConditionedModel.create(first_layer.shape[1], 0, n_classes, seed=seed, dtype=dtype,
                                    schedule=MixingSchedule.fixed(0.0), widths=widths,
                                    with_gnn=False, **kwargs)
    if first_layer.shape != model.w_scratch.shape:
        raise ValueError(f"first layer must have shape {model.w_scratch.shape}")
    model.w_scratch = Tensor(first_layer.astype(dtype), True)
    return model


def train_mlp(x_train, y_train, x_val, y_val, init: InitScheme | np.ndarray,
              config: TrainConfig | None = None, n_classes: int | None = None,
              graphs: list[FeatureGraph] | None = None, model_seed: int | None = None,
              early_stopping: bool = True) -> TrainedModel:
    """Train a plain MLP whose first layer starts at the given scheme's output."""
    config = config or TrainConfig()
    n_classes = n_classes or int(max(np.max(y_train), np.max(y_val))) + 1
    first = init if isinstance(init, np.ndarray) else first_layer_init(init, x_train, graphs)
    model = mlp_model(first, n_classes, seed=config.seed if model_seed is None else model_seed,
                      dtype=config.dtype)
    return train(model, x_train, y_train, x_val, y_val, None, config, early_stopping)
