"""Command-line entry point: ``graphcond <subcommand> ...``.

Progress goes to standard error; results go to files only.  Every output
location also receives a manifest with the resolved configuration, seed,
package version and wall time, which is enough to rerun the command.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import config as cfgmod
from .bench import (BenchmarkError, ModelSpec, curve_specs, curve_study, prepare_split,
                    run_benchmark, run_single)
from .checkpoint import CheckpointError, load_first_layer, save_first_layer, save_model
from .dataio import DatasetError, load_csv, stratified_splits
from .graphs import build_feature_graphs, load_bundle, save_bundle, summarize
from .initializers import InitScheme, first_layer_init

log = logging.getLogger("graphcond")

ENV_OUTPUT_ROOT = "GRAPHCOND_OUTPUT_ROOT"
ENV_JOBS = "GRAPHCOND_JOBS"


class CliError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _out_path(p: str) -> Path:
    path = Path(p)
    root = os.environ.get(ENV_OUTPUT_ROOT)
    return Path(root) / path if root and not path.is_absolute() else path


def _write_manifest(target: Path, command: str, argv: list[str], cfg: dict, started: float) -> None:
    doc = {
        "format_version": cfgmod.FORMAT_VERSION,
        "command": command,
        "argv": argv,
        "config": cfg,
        "seed": cfg.get("seed"),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "wall_time_s": round(time.time() - started, 3),
    }
    target.write_text(json.dumps(doc, sort_keys=True, indent=2))


def _manifest_for_file(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2))


def model_spec(name: str, cfg: dict) -> ModelSpec:
    """Named benchmark model -> :class:`ModelSpec` using the config's hyperparameters."""
    if name not in cfgmod.MODEL_NAMES:
        raise CliError(f"unknown model {name!r}; choose from {', '.join(cfgmod.MODEL_NAMES)}")
    model = dict(cfg["model"])
    graph = cfgmod.graph_config(cfg)
    if name.startswith("gcondnet-"):
        graph.kind = name.split("-", 1)[1]
        return ModelSpec(name, "gcondnet", graph, cfgmod.schedule(cfg), **model)
    init = name.split("-", 1)[1] if "-" in name else "kaiming"
    return ModelSpec(name, "mlp", graph, init=init, **model)


def _single_spec(cfg: dict) -> ModelSpec:
    spec = model_spec("gcondnet-" + cfg["graph"]["kind"], cfg)
    spec.name = "gcondnet"
    return spec


def _load(cfg: dict):
    ds = load_csv(cfg["dataset"]["path"], cfg["dataset"]["label_column"])
    sp = cfg["split"]
    plan = stratified_splits(ds.labels, sp["folds"], sp["repeats"], sp["val_fraction"], cfg["seed"])
    return ds, plan, plan.splits[sp["fold"]]


def _set(over: dict, path: str, value) -> None:
    if value is None:
        return
    node = over
    *head, last = path.split(".")
    for key in head:
        node = node.setdefault(key, {})
    node[last] = value


def _resolve(args, mapping: dict[str, str]) -> dict:
    over: dict = {}
    if getattr(args, "config", None):
        try:
            over = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise cfgmod.ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as e:
            raise cfgmod.ConfigError(f"{args.config}: invalid JSON ({e})") from None
    if os.environ.get(ENV_JOBS):
        try:
            _set(over, "bench.jobs", int(os.environ[ENV_JOBS]))
        except ValueError:
            raise cfgmod.ConfigError(f"{ENV_JOBS}: expected an integer, got {os.environ[ENV_JOBS]!r}") from None
    for attr, path in mapping.items():
        _set(over, path, getattr(args, attr, None))
    return cfgmod.resolve(over)


COMMON = {"data": "dataset.path", "label_column": "dataset.label_column", "seed": "seed",
          "fold": "split.fold", "folds": "split.folds", "repeats": "split.repeats"}
GRAPH = {"graphs": "graph.kind", "k": "graph.k", "rel_dist": "graph.rel_dist",
         "max_degree": "graph.max_degree"}
TRAIN = {"n_alpha": "schedule.n_alpha", "fixed_alpha": "schedule.fixed_alpha",
         "max_steps": "train.max_steps", "batch_size": "train.batch_size",
         "patience": "train.patience_steps", "lr": "train.lr", "weight_decay": "train.weight_decay",
         "precision": "train.precision"}


# ---------------------------------------------------------------- subcommands

def cmd_graphs_build(args, argv, started) -> int:
    cfg = _resolve(args, {**COMMON, **GRAPH})
    ds, _, split = _load(cfg)
    x_tr, _, _ = prepare_split(ds, split)
    gc = cfgmod.graph_config(cfg)
    graphs = build_feature_graphs(x_tr, gc, cfg["seed"])
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_bundle(graphs, out, gc, cfg["seed"],
                meta={"train_indices": split.train.tolist(), "fold": split.fold, "repeat": split.repeat})
    _write_manifest(_manifest_for_file(out), "graphs build", argv, cfg, started)
    log.info("wrote %d graphs (%d nodes each) to %s", len(graphs), graphs[0].node_count, out)
    return 0


def cmd_graphs_stats(args, argv, started) -> int:
    graphs, gc, seed = load_bundle(args.bundle)
    s = summarize(graphs)
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, {"format_version": cfgmod.FORMAT_VERSION, "graphs": len(graphs),
                      "node_count": graphs[0].node_count, "kind": gc.kind, "seed": seed,
                      "degree_mean": s.degree_mean, "degree_std": s.degree_std,
                      "edge_fraction_percent": s.edge_fraction})
    log.info("degree %.2f +- %.2f, edges %.2f%%", s.degree_mean, s.degree_std, s.edge_fraction)
    return 0


def cmd_init(args, argv, started) -> int:
    cfg = _resolve(args, {**COMMON, **GRAPH})
    ds, _, split = _load(cfg)
    x_tr, _, _ = prepare_split(ds, split)
    graphs = build_feature_graphs(x_tr, cfgmod.graph_config(cfg), cfg["seed"]) if args.scheme == "wl" else None
    scheme = InitScheme(args.scheme, cfg["model"]["widths"][0], seed=cfg["seed"])
    w = first_layer_init(scheme, x_tr, graphs)
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_first_layer(w, out, {"scheme": args.scheme, "seed": cfg["seed"], "fold": split.fold,
                              "n_features": ds.n_features, **scheme.info})
    _write_manifest(_manifest_for_file(out), "init", argv, cfg, started)
    log.info("wrote %s first layer %s to %s", args.scheme, w.shape, out)
    return 0


def cmd_train(args, argv, started) -> int:
    cfg = _resolve(args, {**COMMON, **GRAPH, **TRAIN})
    ds, _, split = _load(cfg)
    spec, graphs, first = _single_spec(cfg), None, None
    if args.init_checkpoint:
        first, meta = load_first_layer(args.init_checkpoint)
        spec = model_spec("mlp", cfg)
        log.info("plain MLP from %s first layer %s", meta.get("scheme", "?"), first.shape)
    elif args.graph_bundle:
        graphs, _, _, meta = load_bundle(args.graph_bundle, with_meta=True)
        if meta.get("train_indices") != split.train.tolist():
            raise CliError(f"{args.graph_bundle} was built for a different training split")
    tc = cfgmod.train_config(cfg)
    test_acc, val_acc, trainer = run_single(ds, spec, split, cfg["seed"], tc, graphs=graphs, first_layer=first)
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfgmod.dump_config(cfg))
    trainer.history.to_csv(out / "history.csv")
    save_model(trainer.model, out / "checkpoint.json")
    h = trainer.history
    _write_json(out / "metrics.json", {
        "format_version": cfgmod.FORMAT_VERSION, "test_balanced_accuracy": test_acc,
        "val_balanced_accuracy": val_acc, "best_val_loss": h.best_val_loss, "best_step": h.best_step,
        "steps": len(h), "stopped_early": h.stopped_early})
    _write_manifest(out / "manifest.json", "train", argv, cfg, started)
    log.info("test balanced accuracy %.4f (best step %d of %d)", test_acc, h.best_step, len(h))
    return 0


def cmd_bench(args, argv, started) -> int:
    cfg = _resolve(args, {**COMMON, **GRAPH, **TRAIN, "jobs": "bench.jobs",
                          "models": "bench.models"})
    ds, plan, _ = _load(cfg)
    specs = [model_spec(n, cfg) for n in cfg["bench"]["models"]]
    out = _out_path(args.out or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        report = run_benchmark(ds, specs, plan, cfgmod.train_config(cfg), cfg["seed"],
                               cfg["bench"]["jobs"], Path(cfg["dataset"]["path"]).stem)
    except BenchmarkError as e:
        log.error("%s", e)
        _write_manifest(out / "manifest.json", "bench", argv, cfg, started)
        return 3
    report.write(out)
    (out / "config.json").write_text(cfgmod.dump_config(cfg))
    _write_manifest(out / "manifest.json", "bench", argv, cfg, started)
    agg = report.to_dict()["aggregates"]["per_dataset"][report.dataset]
    for name, row in agg.items():
        log.info("%-16s %.4f +- %.4f (rank %.1f)", name, row["mean"], row["std"], row["rank"])
    return 0


def cmd_curves(args, argv, started) -> int:
    cfg = _resolve(args, {**COMMON, **GRAPH, **TRAIN, "jobs": "bench.jobs", "alphas": "curves.alphas",
                          "decay": "curves.decay"})
    ds, plan, _ = _load(cfg)
    c = cfg["curves"]
    study = curve_study(ds, c["alphas"], plan, cfgmod.train_config(cfg), c["decay"],
                        cfgmod.graph_config(cfg), cfg["schedule"]["n_alpha"], cfg["seed"],
                        cfg["bench"]["jobs"])
    out = _out_path(args.out or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    study.to_csv(out / "curves.csv")
    (out / "config.json").write_text(cfgmod.dump_config(cfg))
    _write_manifest(out / "manifest.json", "curves", argv, cfg, started)
    log.info("wrote curves for %s", ", ".join(s.name for s in curve_specs(c["alphas"], c["decay"])))
    return 0


def cmd_version(args, argv, started) -> int:
    print(__version__)
    return 0


# ---------------------------------------------------------------- parser

def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _label(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def _add_common(p, data_required: bool = True) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override its values")
    p.add_argument("--data", required=data_required, help="CSV dataset with one label column")
    p.add_argument("--label-column", type=_label, help="label column index or header name (default -1)")
    p.add_argument("--seed", type=int)
    p.add_argument("--fold", type=int, help="fold of the first repeat used for single-split commands")
    p.add_argument("--folds", type=int)
    p.add_argument("--repeats", type=int)


def _add_graph(p) -> None:
    p.add_argument("--graphs", choices=["knn", "srd", "random"])
    p.add_argument("--k", type=int)
    p.add_argument("--rel-dist", type=float)
    p.add_argument("--max-degree", type=int)


def _add_train(p) -> None:
    p.add_argument("--n-alpha", type=int)
    p.add_argument("--fixed-alpha", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--precision", choices=["f32", "f64"])


def build_parser() -> argparse.ArgumentParser:
    quiet = argparse.ArgumentParser(add_help=False)
    quiet.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS,
                       help="only log warnings")
    parser = argparse.ArgumentParser(prog="graphcond", description=__doc__.splitlines()[0],
                                     parents=[quiet])
    sub = parser.add_subparsers(dest="command", metavar="{graphs,init,train,bench,curves,version}")
    _orig = sub.add_parser
    sub.add_parser = lambda *a, **k: _orig(*a, parents=[quiet], **k)

    g = sub.add_parser("graphs", help="build or inspect per-feature graph bundles")
    gsub = g.add_subparsers(dest="graphs_command", metavar="{build,stats}")
    _gorig = gsub.add_parser
    gsub.add_parser = lambda *a, **k: _gorig(*a, parents=[quiet], **k)
    gb = gsub.add_parser("build", help="build graphs from one split's training rows")
    _add_common(gb)
    _add_graph(gb)
    gb.add_argument("--out", required=True, help="bundle file to write")
    gb.set_defaults(func=cmd_graphs_build)
    gs = gsub.add_parser("stats", help="degree and edge statistics of a bundle")
    gs.add_argument("--bundle", required=True)
    gs.add_argument("--out", required=True, help="JSON file to write")
    gs.set_defaults(func=cmd_graphs_stats)

    i = sub.add_parser("init", help="compute a first-layer initialisation checkpoint")
    _add_common(i)
    _add_graph(i)
    i.add_argument("--scheme", required=True, choices=["kaiming", "pca", "nmf", "wl"])
    i.add_argument("--out", required=True, help="checkpoint file to write")
    i.set_defaults(func=cmd_init)

    t = sub.add_parser("train", help="train on one split and write a run directory")
    _add_common(t)
    _add_graph(t)
    _add_train(t)
    t.add_argument("--graph-bundle", help="use graphs from `graphs build` instead of rebuilding")
    t.add_argument("--init-checkpoint", help="train a plain MLP from an `init` checkpoint")
    t.add_argument("--out", required=True, help="run directory")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bench", help="repeated stratified cross-validation benchmark")
    _add_common(b, data_required=False)
    _add_graph(b)
    _add_train(b)
    b.add_argument("--models", type=_names, help=f"comma-separated subset of {','.join(cfgmod.MODEL_NAMES)}")
    b.add_argument("--jobs", type=int, help=f"worker processes (env {ENV_JOBS})")
    b.add_argument("--out", help="output directory")
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("curves", help="loss curves for fixed and decaying mixing coefficients")
    _add_common(c, data_required=False)
    _add_graph(c)
    _add_train(c)
    c.add_argument("--alphas", type=_floats, help="comma-separated fixed alphas")
    c.add_argument("--no-decay", dest="decay", action="store_const", const=False,
                   help="skip the decaying-alpha configuration")
    c.add_argument("--jobs", type=int)
    c.add_argument("--out", help="output directory")
    c.set_defaults(func=cmd_curves)

    v = sub.add_parser("version", help="print the package version")
    v.set_defaults(func=cmd_version)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(message)s")
    started = time.time()
    try:
        return args.func(args, argv, started)
    except (cfgmod.ConfigError, DatasetError, CheckpointError, CliError, ValueError) as e:
        print(f"graphcond: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
