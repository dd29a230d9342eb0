"""Graph-conditioned MLP: first-layer mixing, the training loop and MLP-only inference.

The first-layer weight is ``alpha * W_gnn + (1 - alpha) * W_scratch`` where
``W_gnn`` stacks the pooled GCN embeddings of the D feature graphs and
``W_scratch`` starts at zero.  ``alpha`` decays linearly from 1 to 0; once it
hits 0 the GNN is never evaluated again and training is a plain MLP run.
"""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import AdamWState, Tape, Tensor
from .graphs import FeatureGraph
from .layers import GcnParams, GraphBatch, MlpParams, class_weights, mlp_forward

log = logging.getLogger(__name__)

DTYPES = {"f32": np.float32, "f64": np.float64}


class TrainingError(RuntimeError):
    pass


@dataclass
class MixingSchedule:
    n_alpha: int = 200
    mode: str = "linear"  # linear | fixed
    alpha_value: float = 0.0

    def __post_init__(self):
        if self.mode not in ("linear", "fixed"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.n_alpha < 0:
            raise ValueError("n_alpha must be >= 0")
        if self.mode == "fixed" and not 0.0 <= self.alpha_value <= 1.0:
            raise ValueError("fixed alpha must lie in [0, 1]")

    @classmethod
    def fixed(cls, alpha: float) -> "MixingSchedule":
        return cls(mode="fixed", alpha_value=alpha)


def mixing_alpha(step: int, schedule: MixingSchedule) -> float:
    """``max(0, 1 - step / n_alpha)`` for linear decay; ``n_alpha = 0`` gives 0 everywhere."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if schedule.mode == "fixed":
        return float(schedule.alpha_value)
    if schedule.n_alpha == 0:
        return 0.0
    return max(0.0, 1.0 - step / schedule.n_alpha)


def assemble_w_gnn(graphs, gnn: GcnParams, train: bool = False,
                   rng: np.random.Generator | None = None) -> Tensor:
    """(K x D) matrix whose column j is the mean-pooled GCN embedding of graph j."""
    batch = graphs if isinstance(graphs, GraphBatch) else GraphBatch(graphs, gnn.tensors["gcn1.weight"].dtype)
    return ag.transpose(batch.embed(gnn, train, rng))


def compose_first_layer(w_gnn: Tensor, w_scratch: Tensor, alpha: float) -> Tensor:
    if w_gnn.shape != w_scratch.shape:
        raise ValueError(f"shape mismatch: {w_gnn.shape} vs {w_scratch.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return ag.add(ag.mul(w_gnn, alpha), ag.mul(w_scratch, 1.0 - alpha))


@dataclass
class TrainConfig:
    max_steps: int = 10000
    batch_size: int = 8
    patience_steps: int = 200
    lr: float = 1e-4
    weight_decay: float = 0.0
    seed: int = 0
    precision: str = "f32"

    def __post_init__(self):
        for name in ("max_steps", "batch_size", "patience_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.precision not in DTYPES:
            raise ValueError(f"precision must be one of {sorted(DTYPES)}")

    @property
    def dtype(self):
        return DTYPES[self.precision]


@dataclass
class ConditionedModel:
    """Predictor MLP plus the (training-only) GCN that conditions its first layer."""

    mlp: MlpParams
    w_scratch: Tensor
    gnn: GcnParams | None = None
    schedule: MixingSchedule = field(default_factory=MixingSchedule)
    frozen_first_layer: np.ndarray | None = None

    @classmethod
    def create(cls, n_features: int, n_train: int, n_classes: int, seed: int = 0,
               dtype=np.float32, schedule: MixingSchedule | None = None,
               widths=(100, 100, 10), gcn_widths=(200, 100), with_gnn: bool = True,
               mlp_dropout: float = 0.2, gcn_dropout: float = 0.5, leaky_slope: float = 0.01,
               ) -> "ConditionedModel":
        if with_gnn and gcn_widths[-1] != widths[0]:
            raise ValueError("GCN output width must equal the first hidden width")
        streams = _streams(seed)
        mlp = MlpParams.init(n_classes, widths, streams["init_mlp"], dtype, mlp_dropout, leaky_slope)
        gnn = GcnParams.init(n_train, gcn_widths, streams["init_gnn"], dtype, gcn_dropout) if with_gnn else None
        w_scratch = Tensor(np.zeros((widths[0], n_features), dtype=dtype), True)
        return cls(mlp, w_scratch, gnn, schedule or MixingSchedule())

    @property
    def finalized(self) -> bool:
        return self.frozen_first_layer is not None

    def parameters(self, with_gnn: bool = True) -> dict[str, Tensor]:
        params = dict(self.mlp.tensors)
        params["w_scratch"] = self.w_scratch
        if with_gnn and self.gnn is not None:
            params.update(self.gnn.tensors)
        return params


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init_mlp", "init_gnn", "batches", "dropout_mlp", "dropout_gnn")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


@dataclass
class History:
    step: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    alpha: list[float] = field(default_factory=list)
    best_step: int = -1
    best_val_loss: float = float("inf")
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.step)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "train_loss", "val_loss", "alpha"])
            for row in zip(self.step, self.train_loss, self.val_loss, self.alpha):
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


class Trainer:
    """Step-wise training loop for a :class:`ConditionedModel`.

    Holds the optimizer state, the three RNG streams (batch order, MLP
    dropout, GCN dropout) and the early-stopping bookkeeping, so a run can be
    paused, copied and resumed bit-exactly.
    """

    def __init__(self, model: ConditionedModel, x_train, y_train, x_val, y_val,
                 graphs=None, config: TrainConfig | None = None, skip_gnn_at_zero: bool = True):
        self.config = config or TrainConfig()
        dtype = self.config.dtype
        self.model = model
        self.x_train = np.asarray(x_train, dtype=dtype)
        self.y_train = np.asarray(y_train, dtype=np.int64)
        self.x_val = np.asarray(x_val, dtype=dtype)
        self.y_val = np.asarray(y_val, dtype=np.int64)
        if len(self.y_val) == 0:
            raise ValueError("validation split is empty")
        if len(self.y_train) < 2:
            raise ValueError("need at least 2 training samples")
        self.n_classes = model.mlp.n_classes
        self.weights = class_weights(self.y_train, self.n_classes)
        self.batch = None
        if model.gnn is not None and graphs is not None:
            self.batch = graphs if isinstance(graphs, GraphBatch) else GraphBatch(graphs, dtype)
        elif model.gnn is not None and mixing_alpha(0, model.schedule) > 0:
            raise ValueError("a model with a GNN and alpha > 0 needs feature graphs")
        self.skip_gnn_at_zero = skip_gnn_at_zero
        streams = _streams(self.config.seed)
        self.rng_batches = streams["batches"]
        self.rng_dropout_mlp = streams["dropout_mlp"]
        self.rng_dropout_gnn = streams["dropout_gnn"]
        self.opt = AdamWState(lr=self.config.lr, weight_decay=self.config.weight_decay)
        self.step_count = 0
        self._order = np.zeros(0, dtype=np.int64)
        self._cursor = 0
        self.history = History()
        self._best: tuple | None = None

    # -- batches -------------------------------------------------------
    def _next_batch(self) -> np.ndarray:
        bs = self.config.batch_size
        # A trailing batch of one sample is skipped: batch norm needs two rows.
        if len(self._order) - self._cursor < 2:
            self._order = self.rng_batches.permutation(len(self.y_train))
            self._cursor = 0
        idx = self._order[self._cursor:self._cursor + bs]
        self._cursor += len(idx)
        return idx

    # -- first layer ---------------------------------------------------
    def _uses_gnn(self, alpha: float) -> bool:
        if self.model.gnn is None or self.batch is None:
            return False
        return alpha > 0 or not self.skip_gnn_at_zero

    def first_layer(self, alpha: float, train: bool) -> Tensor:
        m = self.model
        if not self._uses_gnn(alpha):
            return m.w_scratch
        rng = self.rng_dropout_gnn if train else None
        w_gnn = assemble_w_gnn(self.batch, m.gnn, train, rng)
        return compose_first_layer(w_gnn, m.w_scratch, alpha)

    # -- one step ------------------------------------------------------
    def step(self) -> float:
        i = self.step_count
        m = self.model
        alpha = mixing_alpha(i, m.schedule)
        idx = self._next_batch()
        params = m.parameters(with_gnn=self._uses_gnn(alpha))
        for p in params.values():
            p.zero_grad()
        with Tape() as tape:
            first = self.first_layer(alpha, train=True)
            probs = mlp_forward(self.x_train[idx], first, m.mlp, True, self.rng_dropout_mlp)
            loss = ag.weighted_cross_entropy(probs, self.y_train[idx], self.weights)
        train_loss = float(loss.data)
        if not np.isfinite(train_loss):
            raise TrainingError(f"non-finite training loss at step {i}")
        tape.backward(loss)
        ag.adamw_step(params, self.opt)

        first_eval = self.first_layer(alpha, train=False)
        val_probs = mlp_forward(self.x_val, first_eval, m.mlp, False)
        val_loss = float(ag.weighted_cross_entropy(val_probs, self.y_val, self.weights).data)
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at step {i}")

        h = self.history
        h.step.append(i)
        h.train_loss.append(train_loss)
        h.val_loss.append(val_loss)
        h.alpha.append(alpha)
        if val_loss < h.best_val_loss:
            h.best_val_loss = val_loss
            h.best_step = i
            self._best = (m.mlp.copy(), first_eval.data.copy())
        self.step_count += 1
        return train_loss

    def should_stop(self) -> bool:
        h = self.history
        return h.best_step >= 0 and self.step_count - 1 - h.best_step >= self.config.patience_steps

    def run(self, steps: int | None = None, early_stopping: bool = True) -> History:
        end = self.config.max_steps if steps is None else min(self.step_count + steps, self.config.max_steps)
        while self.step_count < end:
            self.step()
            if early_stopping and self.should_stop():
                self.history.stopped_early = True
                log.info("early stop at step %d (best %d)", self.step_count - 1, self.history.best_step)
                break
        return self.history

    def finalize(self, restore_best: bool = True) -> ConditionedModel:
        """Freeze the first layer; optionally roll back to the best-validation checkpoint."""
        m = self.model
        if restore_best and self._best is not None:
            m.mlp, frozen = self._best[0].copy(), self._best[1].copy()
        else:
            alpha = mixing_alpha(max(self.step_count - 1, 0), m.schedule)
            frozen = self.first_layer(alpha, train=False).data.copy()
        m.frozen_first_layer = frozen
        return m

    # -- hand-over to a plain MLP ---------------------------------------
    def detach_gnn(self) -> "Trainer":
        """A copy of this trainer that continues as a plain MLP.

        Only valid once alpha has reached 0 for good: the copy starts from the
        current ``W_scratch`` (the frozen composition) with the same optimizer
        moments, RNG streams, batch order and early-stopping state.
        """
        m = self.model
        if mixing_alpha(self.step_count, m.schedule) != 0.0:
            raise ValueError("alpha has not reached 0")
        other = copy.copy(self)
        other.model = ConditionedModel(m.mlp.copy(), Tensor(m.w_scratch.data.copy(), True), None,
                                       MixingSchedule.fixed(0.0))
        other.batch = None
        other.opt = self.opt.copy()
        for name in list(other.opt.m):
            if name.startswith("gcn"):
                del other.opt.m[name], other.opt.v[name]
        other.rng_batches = copy.deepcopy(self.rng_batches)
        other.rng_dropout_mlp = copy.deepcopy(self.rng_dropout_mlp)
        other.rng_dropout_gnn = copy.deepcopy(self.rng_dropout_gnn)
        other._order = self._order.copy()
        other.history = copy.deepcopy(self.history)
        other._best = copy.deepcopy(self._best)
        return other


@dataclass
class TrainedModel:
    model: ConditionedModel
    history: History


def train(model: ConditionedModel, x_train, y_train, x_val, y_val, graphs=None,
          config: TrainConfig | None = None, early_stopping: bool = True) -> TrainedModel:
    """Run the full training loop and return the finalized (best-validation) model."""
    trainer = Trainer(model, x_train, y_train, x_val, y_val, graphs, config)
    history = trainer.run(early_stopping=early_stopping)
    return TrainedModel(trainer.finalize(restore_best=True), history)


def predict(model, x) -> np.ndarray:
    """Class probabilities from the MLP alone; the GNN and graphs are not touched."""
    m = model.model if isinstance(model, TrainedModel) else model
    if m.frozen_first_layer is None:
        raise ValueError("model is not finalized; train it or call Trainer.finalize() first")
    first = Tensor(m.frozen_first_layer)
    x = np.asarray(x, dtype=first.dtype)
    return mlp_forward(x, first, m.mlp, train=False).data


def predict_labels(model, x) -> np.ndarray:
    return predict(model, x).argmax(axis=1)
