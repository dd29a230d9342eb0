"""Mixing schedule, first-layer composition and the training loop."""

import numpy as np
import pytest

from graphcond import autograd as ag
from graphcond.autograd import Tape, Tensor
from graphcond.graphs import FeatureGraph, build_knn_graph
from graphcond.initializers import mlp_model
from graphcond.layers import GcnParams, GraphBatch, class_weights, mlp_forward
from graphcond.model import (ConditionedModel, MixingSchedule, TrainConfig, Trainer, TrainingError,
                             assemble_w_gnn, compose_first_layer, mixing_alpha, predict, train)

from gradcheck import gradient_errors
from test_layers import dense_gcn


def separable(n=40, d=10, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    w = rng.standard_normal(d)
    y = (x @ w > 0).astype(int)
    x += 0.5 * np.outer(2 * y - 1, w / np.linalg.norm(w))
    return x, y


def split(x, y, n_val=8):
    return x[n_val:], y[n_val:], x[:n_val], y[:n_val]


class TestMixingAlpha:
    @pytest.mark.parametrize("step,expected", [(0, 1.0), (100, 0.5), (300, 0.0), (200, 0.0)])
    def test_linear(self, step, expected):
        assert mixing_alpha(step, MixingSchedule(200)) == expected

    def test_zero_horizon_is_zero(self):
        assert [mixing_alpha(i, MixingSchedule(0)) for i in range(3)] == [0.0, 0.0, 0.0]

    def test_fixed(self):
        assert mixing_alpha(1234, MixingSchedule.fixed(0.4)) == 0.4

    def test_invalid(self):
        with pytest.raises(ValueError):
            mixing_alpha(-1, MixingSchedule())
        with pytest.raises(ValueError):
            MixingSchedule.fixed(1.5)
        with pytest.raises(ValueError):
            MixingSchedule(-3)


class TestCompose:
    def test_endpoints(self):
        g, s = Tensor(np.array([[1.0, 2.0]])), Tensor(np.array([[3.0, 4.0]]))
        np.testing.assert_array_equal(compose_first_layer(g, s, 1.0).data, g.data)
        np.testing.assert_array_equal(compose_first_layer(g, s, 0.0).data, s.data)

    def test_arithmetic(self):
        out = compose_first_layer(Tensor(np.array([[2.0]])), Tensor(np.array([[7.0]])), 0.4)
        assert out.data[0, 0] == pytest.approx(5.0, abs=1e-15)

    def test_errors(self):
        with pytest.raises(ValueError):
            compose_first_layer(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 3))), 0.5)
        with pytest.raises(ValueError):
            compose_first_layer(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))), 1.2)

    def test_gradient_routing(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((6, 4))
        from graphcond.layers import MlpParams
        mlp = MlpParams.init(2, (5, 4, 3), rng, np.float64)
        wg, ws = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
        y, alpha = np.array([0, 1, 0, 1, 1, 0]), 0.3

        w1 = Tensor(alpha * wg + (1 - alpha) * ws, True)
        with Tape() as tape:
            loss = ag.weighted_cross_entropy(mlp_forward(x, w1, mlp.copy()), y, np.ones(2))
        tape.backward(loss)
        tg, ts = Tensor(wg, True), Tensor(ws, True)
        with Tape() as tape:
            loss = ag.weighted_cross_entropy(mlp_forward(x, compose_first_layer(tg, ts, alpha), mlp.copy()),
                                             y, np.ones(2))
        tape.backward(loss)
        np.testing.assert_allclose(tg.grad, alpha * w1.grad, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(ts.grad, (1 - alpha) * w1.grad, rtol=1e-12, atol=1e-15)


class TestAssemble:
    def test_dense_oracle(self, knn_graphs):
        _, graphs = knn_graphs
        params = GcnParams.init(12, (8, 5), 1)
        w = assemble_w_gnn(graphs[:3], params).data
        assert w.shape == (5, 3)
        for j in range(3):
            np.testing.assert_allclose(w[:, j], dense_gcn(graphs[j], params).mean(0), atol=1e-6)

    def test_single_graph(self, knn_graphs):
        _, graphs = knn_graphs
        params = GcnParams.init(12, (8, 5), 1)
        np.testing.assert_allclose(assemble_w_gnn(graphs[:1], params).data[:, 0],
                                   dense_gcn(graphs[0], params).mean(0), atol=1e-12)

    def test_identical_graphs_identical_columns(self, knn_graphs):
        _, graphs = knn_graphs
        w = assemble_w_gnn([graphs[2], graphs[2]], GcnParams.init(12, (8, 5), 1)).data
        np.testing.assert_array_equal(w[:, 0], w[:, 1])

    def test_node_count_mismatch(self, knn_graphs):
        _, graphs = knn_graphs
        with pytest.raises(ValueError):
            assemble_w_gnn(graphs, GcnParams.init(11, (8, 5), 1))

    def test_relabelling_invariance(self, knn_graphs):
        _, graphs = knn_graphs
        rng = np.random.default_rng(4)
        perm = rng.permutation(12)
        inv = np.argsort(perm)
        relabelled = [FeatureGraph(12, g.values[perm], inv[g.edges]) for g in graphs]
        params = GcnParams.init(12, (200, 100), 2)
        a = assemble_w_gnn(graphs, params).data
        # node i of the relabelled graph is node perm[i]; its one-hot slot moves with it
        params_p = GcnParams({**params.tensors, "gcn1.weight": Tensor(params.tensors["gcn1.weight"].data[perm])})
        b = assemble_w_gnn(relabelled, params_p).data
        np.testing.assert_allclose(a, b, atol=1e-10)


class TestGradients:
    def test_full_loss_matches_finite_differences(self):
        for seed in range(3):
            errors, _, _ = gradient_errors(seed, per_tensor=5)
            assert max(errors.values()) < 1e-4, errors


class TestTrainer:
    def make(self, x, y, schedule=None, seed=0, precision="f64", **cfg):
        xtr, ytr, xva, yva = split(x, y)
        graphs = [build_knn_graph(xtr[:, j], 5) for j in range(x.shape[1])]
        config = TrainConfig(seed=seed, precision=precision, **cfg)
        model = ConditionedModel.create(x.shape[1], len(ytr), 2, seed=seed, dtype=config.dtype,
                                        schedule=schedule or MixingSchedule(20))
        return Trainer(model, xtr, ytr, xva, yva, graphs, config)

    def test_step_zero_composition_is_w_gnn(self):
        x, y = separable()
        tr = self.make(x, y, precision="f32")
        expected = assemble_w_gnn(tr.batch, tr.model.gnn, False).data
        np.testing.assert_array_equal(tr.first_layer(mixing_alpha(0, tr.model.schedule), False).data, expected)

    def test_history_alpha_column(self):
        x, y = separable()
        tr = self.make(x, y, MixingSchedule(7), max_steps=15)
        tr.run(early_stopping=False)
        assert tr.history.alpha == [mixing_alpha(i, MixingSchedule(7)) for i in range(15)]

    def test_no_early_stop_before_patience(self):
        x, y = separable()
        tr = self.make(x, y, max_steps=50, patience_steps=100)
        h = tr.run()
        assert len(h) == 50 and not h.stopped_early

    def test_early_stopping_restores_best(self):
        x, y = separable(seed=3)
        tr = self.make(x, y, max_steps=400, patience_steps=10)
        h = tr.run()
        assert h.stopped_early and len(h) == h.best_step + 11
        m = tr.finalize()
        xva, yva = split(x, y)[2:]
        val = ag.weighted_cross_entropy(Tensor(predict(m, xva)), yva, tr.weights)
        assert float(val.data) == pytest.approx(h.best_val_loss, rel=1e-12)

    def test_fixed_zero_alpha_equals_zero_started_mlp(self):
        x, y = separable()
        xtr, ytr, xva, yva = split(x, y)
        cfg = TrainConfig(seed=5, precision="f64", max_steps=60)
        gc = ConditionedModel.create(10, len(ytr), 2, seed=5, dtype=np.float64, schedule=MixingSchedule.fixed(0.0))
        graphs = [build_knn_graph(xtr[:, j], 5) for j in range(10)]
        a = Trainer(gc, xtr, ytr, xva, yva, graphs, cfg)
        b = Trainer(mlp_model(np.zeros((100, 10)), 2, seed=5, dtype=np.float64), xtr, ytr, xva, yva, None, cfg)
        a.run(early_stopping=False)
        b.run(early_stopping=False)
        assert a.history.train_loss == b.history.train_loss
        for k, t in a.model.mlp.tensors.items():
            np.testing.assert_array_equal(t.data, b.model.mlp.tensors[k].data)
        np.testing.assert_array_equal(a.model.w_scratch.data, b.model.w_scratch.data)

    def test_skipping_gnn_changes_nothing(self):
        x, y = separable()
        runs = []
        for skip in (True, False):
            tr = self.make(x, y, MixingSchedule(10), seed=2, max_steps=60)
            tr.skip_gnn_at_zero = skip
            tr.run(early_stopping=False)
            runs.append(tr)
        a, b = runs
        assert a.history.train_loss == b.history.train_loss
        assert a.history.val_loss == b.history.val_loss
        np.testing.assert_array_equal(a.model.w_scratch.data, b.model.w_scratch.data)

    def test_w_scratch_untouched_while_alpha_is_one(self):
        x, y = separable()
        tr = self.make(x, y, MixingSchedule.fixed(1.0), max_steps=5)
        tr.run(early_stopping=False)
        assert not np.any(tr.model.w_scratch.data)

    def test_detach_requires_alpha_zero(self):
        x, y = separable()
        tr = self.make(x, y, MixingSchedule(20), max_steps=30)
        tr.run(steps=5, early_stopping=False)
        with pytest.raises(ValueError):
            tr.detach_gnn()

    def test_non_finite_loss_reports_step(self):
        x, y = separable()
        x = x.copy()
        x[8:, 0] = np.nan
        tr = self.make(x, y, max_steps=5)
        with pytest.raises(TrainingError, match="step 0"):
            tr.step()

    def test_empty_validation(self):
        x, y = separable()
        model = ConditionedModel.create(10, 40, 2, dtype=np.float64)
        with pytest.raises(ValueError, match="validation"):
            Trainer(model, x, y, x[:0], y[:0], None, TrainConfig(precision="f64"))

    def test_gnn_model_needs_graphs(self):
        x, y = separable()
        model = ConditionedModel.create(10, 32, 2, dtype=np.float64)
        with pytest.raises(ValueError, match="graphs"):
            Trainer(model, *split(x, y), None, TrainConfig(precision="f64"))

    def test_separable_toy_converges(self):
        x, y = separable()
        tr = self.make(x, y, MixingSchedule(200), precision="f32", max_steps=2000)
        tr.run(early_stopping=False)
        m = tr.finalize(restore_best=False)
        xtr, ytr = split(x, y)[:2]
        loss = ag.weighted_cross_entropy(Tensor(predict(m, xtr)), ytr, class_weights(ytr, 2))
        assert float(loss.data) < 0.1

    def test_config_validation(self):
        for bad in ({"max_steps": 0}, {"batch_size": 0}, {"lr": 0.0}, {"precision": "f16"}):
            with pytest.raises(ValueError):
                TrainConfig(**bad)

    def test_batches_cover_each_epoch(self):
        x, y = separable()
        tr = self.make(x, y, batch_size=8)
        seen = np.concatenate([tr._next_batch() for _ in range(4)])
        assert sorted(seen) == list(range(32))


@pytest.fixture(scope="module")
def trained():
    x, y = separable(seed=1)
    xtr, ytr, xva, yva = split(x, y)
    graphs = [build_knn_graph(xtr[:, j], 5) for j in range(10)]
    model = ConditionedModel.create(10, len(ytr), 2, seed=1, dtype=np.float64, schedule=MixingSchedule(10))
    return train(model, xtr, ytr, xva, yva, graphs, TrainConfig(max_steps=40, precision="f64")), x


class TestPredict:
    def test_rows_sum_to_one_and_deterministic(self, trained):
        tm, x = trained
        p = predict(tm, x)
        np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(p, predict(tm, x))

    def test_equals_direct_mlp_forward(self, trained):
        tm, x = trained
        m = tm.model
        direct = mlp_forward(x, Tensor(m.frozen_first_layer), m.mlp, train=False).data
        np.testing.assert_array_equal(predict(tm, x), direct)

    def test_does_not_touch_gnn(self, trained):
        tm, x = trained
        m = tm.model
        bare = ConditionedModel(m.mlp, m.w_scratch, None, m.schedule, m.frozen_first_layer)
        np.testing.assert_array_equal(predict(bare, x), predict(tm, x))

    def test_unfinalized_rejected(self):
        with pytest.raises(ValueError, match="finalized"):
            predict(ConditionedModel.create(4, 10, 2), np.ones((2, 4)))
