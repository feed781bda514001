"""CLI smoke and determinism tests (tiny workloads)."""

import json

import numpy as np
import pytest

from taskadc.cli import main
from taskadc.harness import load_checkpoint, load_dataset


def run(argv):
    main([str(a) for a in argv])


@pytest.fixture
def dataset_path(tmp_path):
    path = tmp_path / "data.npz"
    run(["gen-data", "--num", 300, "--seed", 1, "--snr-db", 10,
         "--out", path])
    return path


class TestGenData:
    def test_writes_dataset_and_manifest(self, dataset_path):
        ds, model, task = load_dataset(dataset_path)
        assert len(ds) == 300 and task == "classification"
        manifest = json.loads((dataset_path.parent
                               / "data.npz.manifest.json").read_text())
        assert manifest["seed"] == 1

    def test_deterministic_bytes(self, tmp_path):
        paths = [tmp_path / "a.npz", tmp_path / "b.npz"]
        for p in paths:
            run(["gen-data", "--num", 100, "--seed", 3, "--out", p])
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_model_noise_flag(self, tmp_path):
        p1, p2 = tmp_path / "c.npz", tmp_path / "d.npz"
        run(["gen-data", "--num", 100, "--seed", 3, "--out", p1])
        run(["gen-data", "--num", 100, "--seed", 3, "--model-noise", 0.3,
             "--out", p2])
        a, _, _ = load_dataset(p1)
        b, _, _ = load_dataset(p2)
        assert not np.array_equal(a.x, b.x)


class TestTrainEval:
    def test_train_then_eval(self, tmp_path, dataset_path):
        ckpt = tmp_path / "sys.json"
        losses = tmp_path / "loss.csv"
        run(["train", "--data", dataset_path, "--epochs", 2, "--seed", 2,
             "--out", ckpt, "--loss-csv", losses])
        sys = load_checkpoint(ckpt)
        assert sys.hyper.bit_cost() == 48
        assert losses.read_text().startswith("# schema_version=1\nepoch,loss")

        out = tmp_path / "eval.csv"
        run(["eval", "--ckpt", ckpt, "--detector", "learned", "map-full",
             "--trials", 500, "--seed", 4, "--snr-db", 10, "--out", out])
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 4  # schema + header + 2 detectors

    def test_eval_dimension_mismatch_exits(self, tmp_path, dataset_path):
        ckpt = tmp_path / "sys.json"
        run(["train", "--data", dataset_path, "--epochs", 1, "--out", ckpt])
        with pytest.raises(SystemExit):
            run(["eval", "--ckpt", ckpt, "--k", 8, "--trials", 10,
                 "--out", tmp_path / "x.csv"])

    def test_eval_csv_identical_across_runs_and_workers(self, tmp_path):
        outs = []
        for tag, workers in (("a", 1), ("b", 1), ("c", 2)):
            out = tmp_path / f"{tag}.csv"
            run(["eval", "--detector", "map-full", "--trials", 2000,
                 "--seed", 5, "--workers", workers, "--out", out])
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] == outs[2]


class TestSweep:
    def test_sweep_rows(self, tmp_path):
        out = tmp_path / "sweep.csv"
        run(["sweep", "--detector", "map-full", "map-sampled",
             "--snrs-db", "0,6", "--trials", 400, "--epochs", 1,
             "--num", 200, "--out", out])
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 2 + 4


class TestGridScan:
    def test_tiny_grid(self, tmp_path):
        out = tmp_path / "grid.csv"
        run(["grid-scan", "--p-min", 1, "--p-max", 1, "--samples-min", 1,
             "--samples-max", 2, "--levels", 4, "--repeats", 1,
             "--budget", 20, "--epochs", 1, "--num", 200, "--trials", 300,
             "--snrs-db", "5", "--out", out])
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 2 + 2


class TestMeta:
    def test_tiny_meta(self, tmp_path):
        trace = tmp_path / "trace.csv"
        ckpt = tmp_path / "meta.json"
        run(["meta", "--budget", 4, "--i-max", 2, "--epochs", 1,
             "--num", 200, "--trials", 300, "--snrs-db", "5",
             "--trace-out", trace, "--ckpt-out", ckpt])
        lines = trace.read_text().strip().split("\n")
        assert len(lines) >= 3
        manifest = json.loads((tmp_path / "trace.csv.manifest.json").read_text())
        assert manifest["bit_cost"] <= 4
        assert load_checkpoint(ckpt).hyper.bit_cost() <= 4


class TestConfigFile:
    def test_yaml_defaults_with_flag_override(self, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("num: 123\nseed: 9\n")
        out = tmp_path / "data.npz"
        run(["--config", cfg, "gen-data", "--seed", 11, "--out", out])
        ds, _, _ = load_dataset(out)
        assert len(ds) == 123      # from config
        assert ds.seed == 11       # flag wins
