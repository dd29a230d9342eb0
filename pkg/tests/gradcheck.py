"""Finite-difference check of the complete conditioned-model loss.

Central differences are only an oracle where the loss is smooth across the
whole stencil.  ReLU and LeakyReLU make it piecewise smooth, so every
evaluation records the on/off pattern of all activation inputs; when the
pattern at x + h or x - h differs from the one at x, the stencil straddles a
kink and h is shrunk (by 10x steps) until it no longer does.  How often that
happened is reported alongside the errors.
"""

from contextlib import contextmanager

import numpy as np

from graphcond import autograd as ag
from graphcond.autograd import Tape, weighted_cross_entropy
from graphcond.graphs import build_knn_graph
from graphcond.layers import GraphBatch, class_weights, mlp_forward
from graphcond.model import ConditionedModel, assemble_w_gnn, compose_first_layer

from conftest import rel_error

H = 1e-5


@contextmanager
def activation_patterns(sink: list):
    relu, leaky, fused = ag.relu, ag.leaky_relu, ag.affine_relu_dropout

    def rec_relu(x):
        sink.append(x.data > 0)
        return relu(x)

    def rec_leaky(x, slope=0.01):
        sink.append(x.data > 0)
        return leaky(x, slope)

    def rec_fused(x, w, b, p, rng, train):
        xd = x.data if isinstance(x, ag.Tensor) else x
        sink.append(xd @ w.data + b.data > 0)
        return fused(x, w, b, p, rng, train)

    ag.relu, ag.leaky_relu, ag.affine_relu_dropout = rec_relu, rec_leaky, rec_fused
    try:
        yield
    finally:
        ag.relu, ag.leaky_relu, ag.affine_relu_dropout = relu, leaky, fused


def conditioned_loss(model, batch, x, y, weights, alpha, seed):
    """Train-mode loss with dropout masks fixed by ``seed``."""
    w_gnn = assemble_w_gnn(batch, model.gnn, True, np.random.default_rng([seed, 1]))
    first = compose_first_layer(w_gnn, model.w_scratch, alpha)
    probs = mlp_forward(x, first, model.mlp, True, np.random.default_rng([seed, 2]))
    return weighted_cross_entropy(probs, y, weights)


def make_instance(seed, n=12, d=6, alpha=0.6):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    y = np.arange(n) % 2
    graphs = [build_knn_graph(x[:, j], 5) for j in range(d)]
    model = ConditionedModel.create(d, n, 2, seed=seed, dtype=np.float64)
    model.w_scratch.data[:] = rng.standard_normal(model.w_scratch.shape) * 0.3
    for name, t in model.parameters().items():
        if name.endswith("bias"):
            t.data[:] = rng.standard_normal(t.shape) * 0.1
    return model, GraphBatch(graphs, np.float64), x, y, class_weights(y, 2), alpha


def _evaluate(f):
    pats: list = []
    with activation_patterns(pats):
        val = f()
    return val, pats


def _same(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def directional_difference(f, p: np.ndarray, direction: np.ndarray, h: float = H):
    """Central difference of ``f`` along ``direction``; returns (value, h actually used)."""
    base = p.copy()
    _, ref = _evaluate(f)
    while True:
        p[...] = base + h * direction
        up, pu = _evaluate(f)
        p[...] = base - h * direction
        down, pd = _evaluate(f)
        p[...] = base
        if (_same(pu, ref) and _same(pd, ref)) or h < 1e-9:
            return (up - down) / (2 * h), h
        h /= 10


def gradient_errors(seed, h=H, per_tensor=25):
    """Max relative error per parameter tensor, and how many stencils were shrunk.

    Each tensor is checked on ``per_tensor`` random entries (all entries if it
    is smaller) plus one random direction covering the whole tensor.
    """
    model, batch, x, y, w, alpha = make_instance(seed)
    params = model.parameters()
    with Tape() as tape:
        loss = conditioned_loss(model, batch, x, y, w, alpha, seed)
    tape.backward(loss)
    f = lambda: float(conditioned_loss(model, batch, x, y, w, alpha, seed).data)
    rng = np.random.default_rng([seed, 99])
    errors, shrunk, checked = {}, 0, 0
    for name, p in params.items():
        size = p.data.size
        picks = np.arange(size) if size <= per_tensor else rng.choice(size, per_tensor, replace=False)
        num, ana = [], []
        for i in picks:
            e = np.zeros(size)
            e[i] = 1.0
            v, used = directional_difference(f, p.data, e.reshape(p.shape), h)
            num.append(v)
            ana.append(p.grad.reshape(-1)[i])
            shrunk += used != h
        direction = rng.standard_normal(p.shape)
        direction /= np.linalg.norm(direction)
        v, used = directional_difference(f, p.data, direction, h)
        shrunk += used != h
        checked += len(picks) + 1
        dir_ana = float((p.grad * direction).sum())
        dir_err = abs(v - dir_ana) / max(abs(v), abs(dir_ana), 1e-12)
        errors[name] = max(rel_error(ana, num), dir_err)
    return errors, shrunk, checked
