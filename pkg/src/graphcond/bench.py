"""Cross-validation benchmark harness and the mixing-coefficient curve study.

Every (model spec, split, graph resample) triple is one independent run.
Its seed depends only on the master seed and the position of the
(split, resample) pair, so two specs evaluated on the same split share
their seeds and form a matched pair.  Runs can be farmed out to worker
processes; results are collected in run order, which keeps reports
byte-identical whatever the parallelism.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .dataio import Split, SplitPlan, TabularDataset, zscore_apply, zscore_fit
from .graphs import FeatureGraph, GraphConfig, build_feature_graphs
from .initializers import InitScheme, first_layer_init, mlp_model
from .model import ConditionedModel, MixingSchedule, TrainConfig, Trainer, predict_labels

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class BenchmarkError(RuntimeError):
    pass


def balanced_accuracy(y_true, y_pred, classes=None) -> float:
    """Unweighted mean of per-class recall over ``classes`` (default: labels present in ``y_true``)."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have the same length")
    if y_true.size == 0:
        raise ValueError("empty label vector")
    classes = np.unique(y_true) if classes is None else np.asarray(classes)
    recalls = []
    for c in classes:
        mask = y_true == c
        if not mask.any():
            raise ValueError(f"class {c} has no true instances")
        recalls.append(np.mean(y_pred[mask] == c))
    return float(np.mean(recalls))


# ---------------------------------------------------------------- specs and results

@dataclass
class ModelSpec:
    """One benchmark configuration.

    ``kind='gcondnet'`` trains the graph-conditioned model with ``graph`` and
    ``schedule``; ``kind='mlp'`` trains a plain MLP whose first layer comes
    from ``init``.  Random graphs are resampled ``graph_resamples`` times per
    split (default 5 for random graphs, 1 otherwise).
    """

    name: str
    kind: str = "gcondnet"
    graph: GraphConfig = field(default_factory=GraphConfig)
    schedule: MixingSchedule = field(default_factory=MixingSchedule)
    init: str = "kaiming"
    graph_resamples: int | None = None
    widths: tuple = (100, 100, 10)
    gcn_widths: tuple = (200, 100)
    mlp_dropout: float = 0.2
    gcn_dropout: float = 0.5
    leaky_slope: float = 0.01

    def __post_init__(self):
        self.widths, self.gcn_widths = tuple(self.widths), tuple(self.gcn_widths)
        if self.kind not in ("gcondnet", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.graph_resamples is None:
            self.graph_resamples = 5 if self.kind == "gcondnet" and self.graph.kind == "random" else 1
        InitScheme(self.init)

    @property
    def needs_graphs(self) -> bool:
        return self.kind == "gcondnet" or self.init == "wl"

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "graph": asdict(self.graph),
                "schedule": asdict(self.schedule), "init": self.init,
                "graph_resamples": self.graph_resamples, "widths": list(self.widths),
                "gcn_widths": list(self.gcn_widths), "mlp_dropout": self.mlp_dropout,
                "gcn_dropout": self.gcn_dropout, "leaky_slope": self.leaky_slope}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["graph"] = GraphConfig(**d.get("graph", {}))
        d["schedule"] = MixingSchedule(**d.get("schedule", {}))
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]


@dataclass
class RunResult:
    spec: str
    digest: str
    run_index: int
    repeat: int
    fold: int
    resample: int
    seed: int
    test_balanced_accuracy: float
    val_balanced_accuracy: float
    best_val_loss: float
    best_step: int
    steps: int
    curve: str = ""

    @property
    def split_id(self) -> tuple[int, int]:
        return self.repeat, self.fold


def run_seed(master_seed: int, run_index: int) -> int:
    """Per-run seed mixed from the master seed and the run's position."""
    return int(np.random.SeedSequence([master_seed, run_index]).generate_state(1)[0])


# ---------------------------------------------------------------- one run

def prepare_split(ds: TabularDataset, split: Split):
    """Z-score every part of ``split`` with statistics from its training rows only."""
    norm = zscore_fit(ds.matrix[split.train])
    return tuple(zscore_apply(norm, ds.matrix[idx]) for idx in (split.train, split.val, split.test))


def build_model(spec: ModelSpec, x_train, n_classes: int, seed: int, config: TrainConfig,
                graphs: list[FeatureGraph] | None, first_layer=None) -> ConditionedModel:
    """Untrained model for ``spec``; ``first_layer`` overrides a plain MLP's initial weights."""
    opts = dict(widths=spec.widths, mlp_dropout=spec.mlp_dropout, leaky_slope=spec.leaky_slope)
    if spec.kind == "gcondnet":
        return ConditionedModel.create(x_train.shape[1], x_train.shape[0], n_classes, seed=seed,
                                       dtype=config.dtype, schedule=spec.schedule,
                                       gcn_widths=spec.gcn_widths, gcn_dropout=spec.gcn_dropout, **opts)
    if first_layer is None:
        first_layer = first_layer_init(InitScheme(spec.init, spec.widths[0], seed=seed), x_train, graphs)
    return mlp_model(first_layer, n_classes, seed=seed, dtype=config.dtype, **opts)


def run_single(ds: TabularDataset, spec: ModelSpec, split: Split, seed: int, config: TrainConfig,
               early_stopping: bool = True, graphs: list[FeatureGraph] | None = None,
               first_layer=None):
    """Train one model on one split; returns (test bal. acc, val bal. acc, trainer).

    Graphs are built from the split's normalised training rows unless given.
    """
    x_tr, x_va, x_te = prepare_split(ds, split)
    y_tr, y_va, y_te = (ds.labels[i] for i in (split.train, split.val, split.test))
    if graphs is None and spec.needs_graphs and first_layer is None:
        graphs = build_feature_graphs(x_tr, spec.graph, seed)
    model = build_model(spec, x_tr, ds.class_count, seed, config, graphs, first_layer)
    run_cfg = TrainConfig(**{**asdict(config), "seed": seed})
    trainer = Trainer(model, x_tr, y_tr, x_va, y_va, graphs if spec.kind == "gcondnet" else None, run_cfg)
    trainer.run(early_stopping=early_stopping)
    trainer.finalize(restore_best=True)
    test_acc = balanced_accuracy(y_te, predict_labels(trainer.model, x_te))
    val_acc = balanced_accuracy(y_va, predict_labels(trainer.model, x_va))
    return test_acc, val_acc, trainer


def _task(args):
    ds, spec, split, idx, resample, seed, config = args
    try:
        test_acc, val_acc, trainer = run_single(ds, spec, split, seed, config)
    except Exception as e:  # re-raised by the caller with the config digest
        return idx, None, f"{type(e).__name__}: {e}"
    h = trainer.history
    res = RunResult(spec.name, spec.digest(), idx, split.repeat, split.fold, resample, seed,
                    test_acc, val_acc, h.best_val_loss, h.best_step, len(h), f"curves/{spec.name}.csv")
    curve = (list(h.step), list(h.train_loss), list(h.val_loss), list(h.alpha))
    return idx, (res, curve), None


def _map(fn, tasks, jobs: int):
    if jobs <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------- reports

@dataclass
class BenchmarkReport:
    dataset: str
    master_seed: int
    specs: list[ModelSpec]
    train_config: TrainConfig
    rows: list[RunResult] = field(default_factory=list)
    curves: dict[int, tuple] = field(default_factory=dict, repr=False)

    def rows_for(self, spec: str) -> list[RunResult]:
        return [r for r in self.rows if r.spec == spec]

    def to_dict(self) -> dict:
        agg = aggregate(self)
        return {
            "format_version": FORMAT_VERSION,
            "dataset": self.dataset,
            "master_seed": self.master_seed,
            "train_config": asdict(self.train_config),
            "specs": [s.to_dict() for s in self.specs],
            "rows": [asdict(r) for r in self.rows],
            "aggregates": agg,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def write(self, out_dir) -> None:
        """report.json, report.csv and one long-format curves/<spec>.csv per spec."""
        out = Path(out_dir)
        (out / "curves").mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        cols = list(RunResult.__dataclass_fields__)
        with (out / "report.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])
        for spec in self.specs:
            with (out / "curves" / f"{spec.name}.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["run_index", "step", "train_loss", "val_loss", "alpha"])
                for r in self.rows_for(spec.name):
                    for s, tl, vl, a in zip(*self.curves.get(r.run_index, ((), (), (), ()))):
                        w.writerow([r.run_index, s, repr(tl), repr(vl), repr(a)])


def run_benchmark(ds: TabularDataset, specs: list[ModelSpec], plan: SplitPlan,
                  config: TrainConfig | None = None, master_seed: int = 0, jobs: int = 1,
                  dataset_name: str = "dataset") -> BenchmarkReport:
    """One :class:`RunResult` per (spec, split, graph resample), in that order."""
    config = config or TrainConfig()
    if not specs:
        raise ValueError("no model specs given")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError(f"spec names must be unique, got {names}")
    tasks, idx = [], 0
    for spec in specs:
        for si, split in enumerate(plan.splits):
            for r in range(spec.graph_resamples):
                # Seeds key on (split, resample) only, so specs are paired run by run.
                seed = run_seed(master_seed, si * 1000 + r)
                tasks.append((ds, spec, split, idx, r, seed, config))
                idx += 1
    log.info("benchmark: %d runs over %d specs, jobs=%d", len(tasks), len(specs), jobs)
    report = BenchmarkReport(dataset_name, master_seed, list(specs), config)
    for i, payload, err in _map(_task, tasks, jobs):
        spec = tasks[i][1]
        if err is not None:
            raise BenchmarkError(f"run {i} of spec {spec.name!r} (digest {spec.digest()}) aborted: {err}")
        res, curve = payload
        report.rows.append(res)
        report.curves[i] = curve
        log.info("run %d %s r%d f%d: test bal. acc %.4f", i, spec.name, res.repeat, res.fold,
                 res.test_balanced_accuracy)
    return report


def aggregate(reports) -> dict:
    """Mean and population std of test balanced accuracy per spec, plus ranks.

    Accepts one report or a list (one per dataset).  Rank 1 is the highest
    mean on a dataset; ties share the average of their ranks.  ``avg_rank``
    averages a spec's ranks over the datasets it appears in.
    """
    reports = [reports] if isinstance(reports, BenchmarkReport) else list(reports)
    if not reports:
        raise ValueError("nothing to aggregate")
    out: dict = {"per_dataset": {}, "avg_rank": {}}
    ranks: dict[str, list[float]] = {}
    for rep in reports:
        table = {}
        for spec in rep.specs:
            accs = np.array([r.test_balanced_accuracy for r in rep.rows_for(spec.name)])
            if accs.size == 0:
                continue
            table[spec.name] = {"mean": float(accs.mean()), "std": float(accs.std()), "n": int(accs.size)}
        order = list(table)
        if order:
            rk = rankdata([-table[n]["mean"] for n in order], method="average")
            for n, r in zip(order, rk):
                table[n]["rank"] = float(r)
                ranks.setdefault(n, []).append(float(r))
        out["per_dataset"][rep.dataset] = table
    out["avg_rank"] = {n: float(np.mean(r)) for n, r in ranks.items()}
    return out


def paired_comparison(report: BenchmarkReport, a: str, b: str) -> dict:
    """Compare spec ``a`` against ``b`` run by run (pairs share split and seed)."""
    rb = {(r.repeat, r.fold, r.resample): r.test_balanced_accuracy for r in report.rows_for(b)}
    diffs = np.array([r.test_balanced_accuracy - rb[(r.repeat, r.fold, r.resample)]
                      for r in report.rows_for(a) if (r.repeat, r.fold, r.resample) in rb])
    if diffs.size == 0:
        raise ValueError(f"no paired runs between {a!r} and {b!r}")
    return {"pairs": int(diffs.size), "mean_diff": float(diffs.mean()),
            "frac_ge": float(np.mean(diffs >= 0)), "frac_gt": float(np.mean(diffs > 0))}


# ---------------------------------------------------------------- curve study

@dataclass
class CurveStudy:
    """Seed-averaged loss curves, one (train, val) pair per label."""

    steps: np.ndarray
    train: dict[str, np.ndarray]
    val: dict[str, np.ndarray]

    def to_csv(self, path) -> None:
        labels = list(self.train)
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step"] + [f"train_{l}" for l in labels] + [f"val_{l}" for l in labels])
            for i, s in enumerate(self.steps):
                w.writerow([int(s)] + [repr(float(self.train[l][i])) for l in labels]
                           + [repr(float(self.val[l][i])) for l in labels])


def curve_label(alpha: float | None) -> str:
    return "decay" if alpha is None else f"alpha={alpha:g}"


def curve_specs(alphas, include_decay: bool = True, graph: GraphConfig | None = None,
                n_alpha: int = 200) -> list[ModelSpec]:
    """Specs for a curve study.

    ``alpha=0`` is the plain MLP (Kaiming first layer); other fixed values keep
    the GNN in the loop for the whole run with ``W_scratch`` starting at zero.
    """
    graph = graph or GraphConfig()
    specs = []
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"fixed alpha {a} outside [0, 1]")
        if a == 0.0:
            specs.append(ModelSpec(curve_label(0.0), "mlp", graph, MixingSchedule.fixed(0.0), graph_resamples=1))
        else:
            specs.append(ModelSpec(curve_label(a), "gcondnet", graph, MixingSchedule.fixed(a), graph_resamples=1))
    if include_decay:
        specs.append(ModelSpec(curve_label(None), "gcondnet", graph, MixingSchedule(n_alpha), graph_resamples=1))
    return specs


def _curve_task(args):
    ds, spec, split, seed, config = args
    _, _, trainer = run_single(ds, spec, split, seed, config, early_stopping=False)
    return np.array(trainer.history.train_loss), np.array(trainer.history.val_loss)


def curve_study(ds: TabularDataset, alphas, plan: SplitPlan, config: TrainConfig | None = None,
                include_decay: bool = True, graph: GraphConfig | None = None, n_alpha: int = 200,
                master_seed: int = 0, jobs: int = 1) -> CurveStudy:
    """Train every configuration for ``config.max_steps`` steps (no early stopping) on
    each split and average the loss curves across splits."""
    config = config or TrainConfig()
    specs = curve_specs(alphas, include_decay, graph, n_alpha)
    tasks = [(ds, spec, split, run_seed(master_seed, si * 1000), config)
             for spec in specs for si, split in enumerate(plan.splits)]
    results = _map(_curve_task, tasks, jobs)
    n = len(plan.splits)
    train, val = {}, {}
    for k, spec in enumerate(specs):
        chunk = results[k * n:(k + 1) * n]
        train[spec.name] = np.mean([c[0] for c in chunk], axis=0)
        val[spec.name] = np.mean([c[1] for c in chunk], axis=0)
    return CurveStudy(np.arange(config.max_steps), train, val)
