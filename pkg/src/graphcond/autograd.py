"""A small tape-based reverse-mode differentiation engine on top of numpy.

Every differentiable op executed inside a ``with Tape() as tape:`` block and
touching a tensor with ``requires_grad=True`` is appended to the tape together
with its vector-Jacobian product.  Execution order is a valid topological
order, so ``tape.backward(loss)`` just walks the records in reverse.

Ops are fused where it pays off (batch norm, softmax, weighted cross-entropy);
everything else is a thin wrapper around a numpy call.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

_TAPES: list["Tape"] = []


class Tensor:
    """An ndarray plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of executed differentiable operations."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        self.records.append((out, inputs, vjp))
        self._produced.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on the tape.

        The tape is consumed.
        """
        if id(loss) not in self._produced:
            raise ValueError("loss was not produced by an operation recorded on this tape")
        adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, vjp in reversed(self.records):
            g = adjoints.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if id(inp) in self._produced:
                    prev = adjoints.get(id(inp))
                    adjoints[id(inp)] = gi if prev is None else prev + gi
                elif inp.grad is None:
                    inp.grad = np.array(gi, dtype=inp.dtype, copy=True)
                else:
                    inp.grad += gi
        self.records.clear()
        self._produced.clear()


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _emit(data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs and _TAPES:
        _TAPES[-1].record(out, tuple(inputs), vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    return _emit(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    return _emit(out, (x,), lambda g: (g * (out > 0),))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    mask = x.data > 0
    scale = np.where(mask, 1.0, slope).astype(x.dtype)
    return _emit(x.data * scale, (x,), lambda g: (g * scale,))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when ``train`` is False or ``p == 0``."""
    if not train or p == 0.0:
        return x
    mask = _keep_mask(x.shape, p, rng).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return _emit(x.data * mask, (x,), lambda g: (g * mask,))


def _keep_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    if float(p * 256).is_integer():
        # One random byte per entry is exact for p = m/256 and ~2x cheaper than floats.
        raw = np.frombuffer(rng.bytes(int(np.prod(shape))), dtype=np.uint8).reshape(shape)
        return raw >= int(p * 256)
    return rng.random(shape, dtype=np.float32) >= p


def affine_relu_dropout(x, w: Tensor, b: Tensor, p: float, rng: np.random.Generator | None,
                        train: bool) -> Tensor:
    """``dropout(relu(x @ w + b))`` for a constant ``x``, computed in place.

    Same values as the three separate ops; exists because on the batched GCN
    hidden layer every extra full-size temporary costs a memory pass.
    """
    xd = x.data if isinstance(x, Tensor) else x
    out = xd @ w.data
    out += b.data
    if not (w.requires_grad or b.requires_grad) or not _TAPES:
        if train and p > 0.0:
            out *= _keep_mask(out.shape, p, rng) * out.dtype.type(1.0 / (1.0 - p))
        np.maximum(out, 0, out=out)
        return Tensor(out)
    if train and p > 0.0:
        factor = _keep_mask(out.shape, p, rng)
        factor &= out > 0
        scale = out.dtype.type(1.0 / (1.0 - p))
    else:
        factor = out > 0
        scale = out.dtype.type(1.0)
    np.multiply(out, factor, out=out)
    if scale != 1:
        out *= scale

    def vjp(g):
        gp = g * factor
        if scale != 1:
            gp *= scale
        return xd.T @ gp, gp.sum(axis=0)

    return _emit(out, (w, b), vjp)


def log(x: Tensor, floor: float = 0.0) -> Tensor:
    clipped = np.maximum(x.data, floor) if floor > 0 else x.data
    live = x.data >= floor
    return _emit(np.log(clipped), (x,), lambda g: (np.where(live, g / clipped, 0),))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        if not b.requires_grad:
            gb = None
        elif a.ndim == 3 and a.shape[1] == 1:
            # batched row-vector times matrix: the weight gradient is an outer product
            gb = np.swapaxes(a.data, -1, -2) * g
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        if gb is not None and gb.shape != b.shape:
            gb = _unbroadcast(gb, b.shape)
        if ga is not None and ga.shape != a.shape:
            ga = _unbroadcast(ga, a.shape)
        return ga, gb

    return _emit(a.data @ b.data, (a, b), vjp)


def spmm(s, x: Tensor) -> Tensor:
    """Constant sparse (or dense) matrix times a differentiable dense matrix."""
    st = s.T.tocsr() if sp.issparse(s) else None
    out = s @ x.data
    return _emit(np.asarray(out, dtype=x.dtype), (x,),
                 lambda g: (np.asarray((st if st is not None else s.T) @ g, dtype=x.dtype),))


def transpose(x: Tensor) -> Tensor:
    return _emit(x.data.T, (x,), lambda g: (g.T,))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------- reductions

def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    shape = x.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(x.dtype),)

    return _emit(np.asarray(x.data.sum(axis=axis)), (x,), vjp)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    shape = x.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).astype(x.dtype),)

    return _emit(np.asarray(x.data.mean(axis=axis)), (x,), vjp)


# ---------------------------------------------------------------- fused layers

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, train: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Batch normalisation over axis 0.

    In train mode the batch statistics are used and the running buffers are
    updated in place (exponential moving average, unbiased variance).
    """
    if not train:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean) * inv
        out = gamma.data * xhat + beta.data

        def vjp_eval(g):
            return g * gamma.data * inv, (g * xhat).sum(0), g.sum(0)

        return _emit(out.astype(x.dtype), (x, gamma, beta), vjp_eval)

    b = x.shape[0]
    if b < 2:
        raise ValueError("batch norm with batch statistics needs a batch of at least 2 rows; "
                         "use eval mode for single samples")
    mu = x.data.mean(0)
    centred = x.data - mu
    var = (centred * centred).mean(0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv
    out = gamma.data * xhat + beta.data
    running_mean *= 1.0 - momentum
    running_mean += momentum * mu
    running_var *= 1.0 - momentum
    running_var += momentum * var * (b / (b - 1))

    def vjp(g):
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(0) - xhat * (dxhat * xhat).mean(0))
        return dx, (g * xhat).sum(0), g.sum(0)

    return _emit(out, (x, gamma, beta), vjp)


def softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _emit(p, (x,), vjp)


def weighted_cross_entropy(probs: Tensor, labels: np.ndarray, class_weights: np.ndarray,
                           floor: float = 1e-12) -> Tensor:
    """Batch mean of ``w[y] * -log(p[y])`` with ``p`` clamped at ``floor``."""
    labels = np.asarray(labels)
    b = probs.shape[0]
    rows = np.arange(b)
    picked = probs.data[rows, labels]
    clipped = np.maximum(picked, floor)
    w = np.asarray(class_weights, dtype=probs.dtype)[labels]
    loss = np.asarray((w * -np.log(clipped)).mean(), dtype=probs.dtype)

    def vjp(g):
        grad = np.zeros_like(probs.data)
        grad[rows, labels] = np.where(picked >= floor, -w / (clipped * b), 0.0) * g
        return (grad,)

    return _emit(loss, (probs,), vjp)


# ---------------------------------------------------------------- optimizer

class AdamWState:
    """Moment buffers and hyper-parameters of decoupled-weight-decay Adam."""

    def __init__(self, lr: float = 1e-4, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def copy(self) -> "AdamWState":
        new = AdamWState(self.lr, self.betas, self.eps, self.weight_decay)
        new.step = self.step
        new.m = {k: v.copy() for k, v in self.m.items()}
        new.v = {k: v.copy() for k, v in self.v.items()}
        return new


def adamw_step(params: dict[str, Tensor], state: AdamWState) -> None:
    """One AdamW update of every tensor in ``params`` using its ``.grad``.

    Parameters without a gradient buffer are treated as having zero gradient.
    """
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if state.weight_decay:
            p.data *= 1.0 - state.lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
