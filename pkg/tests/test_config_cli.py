"""Experiment config parsing and the command-line pipeline."""

import json
import subprocess
import sys

import numpy as np
import pytest

from graphcond import __version__
from graphcond import config as cfgmod
from graphcond.checkpoint import load_first_layer, load_model
from graphcond.cli import main
from graphcond.dataio import load_csv, toy_dataset_path
from graphcond.graphs import load_bundle
from graphcond.model import MixingSchedule, predict

TOY = str(toy_dataset_path())
FAST = ["--max-steps", "30", "--patience", "10", "-q"]


class TestConfig:
    def test_defaults(self):
        cfg = cfgmod.resolve({"dataset": {"path": TOY}})
        assert cfg["model"]["widths"] == [100, 100, 10]
        assert cfg["model"]["gcn_widths"] == [200, 100]
        assert (cfg["model"]["mlp_dropout"], cfg["model"]["gcn_dropout"]) == (0.2, 0.5)
        t = cfg["train"]
        assert (t["batch_size"], t["max_steps"], t["patience_steps"], t["lr"]) == (8, 10000, 200, 1e-4)
        assert cfg["schedule"]["n_alpha"] == 200
        assert (cfg["graph"]["k"], cfg["graph"]["rel_dist"]) == (5, 0.05)

    def test_range_error_names_key(self):
        with pytest.raises(cfgmod.ConfigError, match=r"model\.mlp_dropout: .*1\.5"):
            cfgmod.resolve({"dataset": {"path": TOY}, "model": {"mlp_dropout": 1.5}})

    @pytest.mark.parametrize("over,key", [
        ({"graph": {"k": 0}}, "graph.k"),
        ({"schedule": {"n_alpha": -1}}, "schedule.n_alpha"),
        ({"train": {"colour": 1}}, "train.colour"),
        ({"dataset": {"path": "/no/such.csv"}}, "dataset.path"),
    ])
    def test_errors_carry_key_path(self, over, key):
        base = {"dataset": {"path": TOY}}
        base.update({k: {**base.get(k, {}), **v} for k, v in over.items()})
        with pytest.raises(cfgmod.ConfigError, match=key.replace(".", r"\.")):
            cfgmod.resolve(base)

    def test_missing_dataset(self):
        with pytest.raises(cfgmod.ConfigError, match="dataset.path"):
            cfgmod.resolve({})

    def test_round_trip(self, tmp_path):
        cfg = cfgmod.resolve({"dataset": {"path": TOY}, "graph": {"kind": "srd"}, "seed": 4})
        p = tmp_path / "c.json"
        p.write_text(cfgmod.dump_config(cfg))
        assert cfgmod.parse_config(p) == cfg

    def test_typed_views(self):
        cfg = cfgmod.resolve({"dataset": {"path": TOY}, "schedule": {"fixed_alpha": 0.4}})
        assert cfgmod.schedule(cfg) == MixingSchedule.fixed(0.4)
        assert cfgmod.train_config(cfg).batch_size == 8


class TestCli:
    def test_version(self, capsys):
        assert main(["version"]) == 0
        assert capsys.readouterr().out.strip() == __version__

    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "graphcond", "version"], capture_output=True, text=True)
        assert out.returncode == 0 and out.stdout.strip() == __version__

    def test_missing_data_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["train", "--out", "x"])
        assert e.value.code != 0
        assert "--data" in capsys.readouterr().err

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code != 0

    def test_no_subcommand(self):
        assert main([]) != 0

    def test_bad_config_value(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"model": {"mlp_dropout": 1.5}}))
        assert main(["train", "--data", TOY, "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2
        assert "model.mlp_dropout" in capsys.readouterr().err

    def test_end_to_end(self, tmp_path):
        bundle = tmp_path / "g.json"
        assert main(["graphs", "build", "--data", TOY, "--label-column", "label", "--out", str(bundle), "-q"]) == 0
        assert bundle.with_name("g.manifest.json").is_file()
        assert main(["graphs", "stats", "--bundle", str(bundle), "--out", str(tmp_path / "s.json"), "-q"]) == 0
        stats = json.loads((tmp_path / "s.json").read_text())
        assert stats["graphs"] == 10 and stats["node_count"] == 29  # 40 - 8 test - 3 validation

        run = tmp_path / "run"
        assert main(["train", "--data", TOY, "--label-column", "label", "--graph-bundle", str(bundle),
                     "--n-alpha", "10", "--out", str(run), *FAST]) == 0
        for name in ("config.json", "history.csv", "checkpoint.json", "metrics.json", "manifest.json"):
            assert (run / name).is_file(), name
        header = (run / "history.csv").read_text().splitlines()[0]
        assert header == "step,train_loss,val_loss,alpha"
        model = load_model(run / "checkpoint.json")
        ds = load_csv(TOY, "label")
        assert predict(model, ds.matrix).shape == (40, 2)

        assert main(["init", "--data", TOY, "--label-column", "label", "--scheme", "pca",
                     "--out", str(tmp_path / "pca.json"), "-q"]) == 0
        w, meta = load_first_layer(tmp_path / "pca.json")
        assert w.shape == (100, 10) and meta["scheme"] == "pca" and "padded_rows" in meta
        assert main(["train", "--data", TOY, "--label-column", "label", "--init-checkpoint",
                     str(tmp_path / "pca.json"), "--out", str(tmp_path / "run2"), *FAST]) == 0

        out = tmp_path / "bench"
        assert main(["bench", "--data", TOY, "--label-column", "label", "--models", "gcondnet-knn,mlp",
                     "--folds", "2", "--repeats", "1", "--out", str(out), *FAST]) == 0
        report = json.loads((out / "report.json").read_text())
        assert len(report["rows"]) == 4
        for name in ("report.csv", "curves/gcondnet-knn.csv", "curves/mlp.csv", "manifest.json"):
            assert (out / name).is_file(), name

        out = tmp_path / "curves"
        assert main(["curves", "--data", TOY, "--label-column", "label", "--alphas", "0,0.5",
                     "--folds", "2", "--repeats", "1", "--out", str(out), *FAST]) == 0
        header = (out / "curves.csv").read_text().splitlines()[0].split(",")
        assert header[0] == "step" and "val_alpha=0.5" in header and "val_decay" in header

    def test_manifest_reruns_identically(self, tmp_path):
        args = ["train", "--data", TOY, "--label-column", "label", "--n-alpha", "5", "--seed", "2", *FAST]
        assert main([*args, "--out", str(tmp_path / "a")]) == 0
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 2 and manifest["version"] == __version__
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(manifest["config"]))
        assert main(["train", "--data", TOY, "--config", str(cfg), "--out", str(tmp_path / "b"), "-q"]) == 0
        assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()

    def test_bundle_from_other_split_rejected(self, tmp_path, capsys):
        bundle = tmp_path / "g.json"
        main(["graphs", "build", "--data", TOY, "--label-column", "label", "--fold", "1", "--out", str(bundle), "-q"])
        assert main(["train", "--data", TOY, "--label-column", "label", "--graph-bundle", str(bundle),
                     "--out", str(tmp_path / "r"), *FAST]) == 2
        assert "different training split" in capsys.readouterr().err

    def test_env_overrides(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GRAPHCOND_OUTPUT_ROOT", str(tmp_path / "root"))
        monkeypatch.setenv("GRAPHCOND_JOBS", "2")
        assert main(["bench", "--data", TOY, "--label-column", "label", "--models", "mlp",
                     "--folds", "2", "--repeats", "1", "--out", "b", *FAST]) == 0
        manifest = json.loads((tmp_path / "root" / "b" / "manifest.json").read_text())
        assert manifest["config"]["bench"]["jobs"] == 2
        monkeypatch.setenv("GRAPHCOND_JOBS", "many")
        assert main(["bench", "--data", TOY, "--models", "mlp", "--out", "c", "-q"]) == 2

    def test_bench_abort_exit_code(self, tmp_path, monkeypatch):
        import graphcond.bench as bench

        def boom(*a, **k):
            raise FloatingPointError("nan")

        monkeypatch.setattr(bench, "run_single", boom)
        assert main(["bench", "--data", TOY, "--label-column", "label", "--models", "mlp",
                     "--folds", "2", "--repeats", "1", "--out", str(tmp_path / "b"), *FAST]) == 3
