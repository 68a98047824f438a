import csv
import hashlib
import json

import numpy as np
import pytest

from fcrl.cli import main
from fcrl.data import load_csv, plugin_mi
from fcrl.model import load_model


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def aggregate_rows(path):
    with open(path, newline="") as fh:
        return [r for r in csv.DictReader(fh) if r["aggregate"] == "1"]


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--n", "400", "--p", "4", "--seed", "2", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def swept(synth, tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    argv = ["sweep", "--train", str(synth / "train.csv"), "--betas", "0.01,0.5", "--epochs", "2",
            "--d", "2", "--hidden", "8", "--predictor-hidden", "8", "--out", str(out)]
    assert main(argv) == 0
    return out


class TestSynth:
    def test_xor_contract(self, tmp_path):
        assert main(["synth", "--mode", "xor", "--n", "1000", "--seed", "1", "--out", str(tmp_path)]) == 0
        for name in ("train.csv", "test.csv"):
            ds = load_csv(tmp_path / name)
            bit = (ds.X[:, 0] > 0.5).astype(int)
            np.testing.assert_array_equal(ds.y, bit ^ ds.c)
        assert (tmp_path / "manifest.json").exists()

    def test_independent_labels(self, tmp_path):
        assert main(["synth", "--rho", "0", "--n", "20000", "--out", str(tmp_path)]) == 0
        ds = load_csv(tmp_path / "train.csv")
        assert plugin_mi(ds.y, ds.c) < 0.01

    def test_same_flags_same_bytes(self, tmp_path):
        for sub in ("a", "b"):
            assert main(["synth", "--n", "300", "--seed", "4", "--out", str(tmp_path / sub)]) == 0
        assert sha(tmp_path / "a" / "train.csv") == sha(tmp_path / "b" / "train.csv")

    def test_invalid_combination(self, tmp_path):
        assert main(["synth", "--pi", "1.5", "--out", str(tmp_path)]) == 2
        assert main(["synth", "--mode", "spiral", "--out", str(tmp_path)]) == 1


class TestTrain:
    def test_checkpoint_and_trace(self, synth, tmp_path):
        argv = ["train", "--train", str(synth / "train.csv"), "--beta", "0.1", "--lambda", "2", "--epochs", "5",
                "--d", "2", "--hidden", "8", "--out", str(tmp_path)]
        assert main(argv) == 0
        assert len((tmp_path / "trace.csv").read_text().splitlines()) == 6
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["config"]["beta"] == 0.1 and manifest["seed"] == 0
        assert manifest["datasets"]["train"] == load_csv(synth / "train.csv").content_hash()

    def test_objective_arity(self, synth, tmp_path):
        for obj in ("O1", "O2"):
            argv = ["train", "--train", str(synth / "train.csv"), "--epochs", "1", "--d", "3", "--hidden", "4",
                    "--objective", obj, "--out", str(tmp_path / obj)]
            assert main(argv) == 0
        o1, _ = load_model(tmp_path / "O1" / "model.json")
        o2, _ = load_model(tmp_path / "O2" / "model.json")
        assert o1.params["pred_W1"].shape[0] == 3 and o2.params["pred_W1"].shape[0] == 5

    def test_rerun_is_byte_identical(self, synth, tmp_path):
        argv = ["train", "--train", str(synth / "train.csv"), "--epochs", "2", "--d", "2", "--hidden", "4"]
        assert main(argv + ["--out", str(tmp_path / "a")]) == 0
        assert main(argv + ["--out", str(tmp_path / "b")]) == 0
        for name in ("model.json", "trace.csv"):
            assert sha(tmp_path / "a" / name) == sha(tmp_path / "b" / name)

    def test_config_file_and_override(self, synth, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"# desk run\ntrain = {synth / 'train.csv'}\nbeta = 0.3\nepochs = 1\nd = 2\nhidden = 4\n")
        assert main(["train", "--config", str(cfg), "--beta", "0.7", "--out", str(tmp_path / "o")]) == 0
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert manifest["config"]["beta"] == 0.7 and manifest["config"]["epochs"] == 1

    def test_config_unknown_key(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("colour = blue\n")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 1

    def test_missing_data_file(self, tmp_path):
        assert main(["train", "--train", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 2


class TestSweep:
    def test_warm_sweep_epoch_accounting(self, tmp_path):
        assert main(["synth", "--n", "20", "--p", "3", "--test-fraction", "0.2", "--out", str(tmp_path / "d")]) == 0
        argv = ["sweep", "--train", str(tmp_path / "d" / "train.csv"), "--warm-start", "--grid-points", "30",
                "--epochs", "200", "--finetune-epochs", "20", "--d", "2", "--hidden", "2", "--predictor-hidden", "2",
                "--out", str(tmp_path / "s")]
        assert main(argv) == 0
        manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
        assert manifest["epochs_total"] == 780
        assert len(list((tmp_path / "s").glob("beta_*.json"))) == 30

    def test_one_checkpoint_per_beta(self, swept):
        assert sorted(p.name for p in swept.glob("beta_*.json")) == ["beta_0.01.json", "beta_0.5.json"]


class TestEval:
    def test_one_row_per_checkpoint_and_probe(self, synth, swept, tmp_path):
        out = tmp_path / "r.csv"
        argv = ["eval", "--checkpoints", str(swept), "--train", str(synth / "train.csv"),
                "--test", str(synth / "test.csv"), "--probe", "both", "--probe-seeds", "1", "--out", str(out)]
        assert main(argv) == 0
        rows = aggregate_rows(out)
        assert len(rows) == 4
        assert {r["beta"] for r in rows} == {"0.01", "0.5"}

    def test_group_target_both_preprocessings(self, synth, swept, tmp_path):
        out = tmp_path / "r.csv"
        argv = ["eval", "--checkpoints", str(swept / "beta_0.5.json"), "--train", str(synth / "train.csv"),
                "--test", str(synth / "test.csv"), "--probe", "logreg", "--probe-seeds", "1",
                "--target", "c", "--preprocess", "both", "--out", str(out)]
        assert main(argv) == 0
        assert sorted(r["preprocess"] for r in aggregate_rows(out)) == ["none", "standard_scale"]

    def test_leakage_pairs(self, synth, swept, tmp_path):
        out = tmp_path / "leak.csv"
        argv = ["leakage", "--checkpoints", str(swept), "--train", str(synth / "train.csv"),
                "--test", str(synth / "test.csv"), "--probe", "logreg", "--probe-seeds", "1", "--out", str(out)]
        assert main(argv) == 0
        rows = aggregate_rows(out)
        assert len(rows) == 4 and all(r["target"] == "c" for r in rows)

    def test_raw_features(self, synth, tmp_path):
        out = tmp_path / "raw.csv"
        argv = ["eval", "--raw-features", "--train", str(synth / "train.csv"), "--test", str(synth / "test.csv"),
                "--probe", "logreg", "--probe-seeds", "1", "--out", str(out)]
        assert main(argv) == 0
        assert aggregate_rows(out)[0]["checkpoint"] == "raw_features"

    def test_dimension_mismatch(self, swept, tmp_path):
        assert main(["synth", "--n", "100", "--p", "6", "--out", str(tmp_path)]) == 0
        argv = ["eval", "--checkpoints", str(swept), "--train", str(tmp_path / "train.csv"),
                "--test", str(tmp_path / "test.csv"), "--out", str(tmp_path / "r.csv")]
        assert main(argv) == 2

    def test_needs_a_source(self, synth, tmp_path):
        argv = ["eval", "--train", str(synth / "train.csv"), "--test", str(synth / "test.csv"),
                "--out", str(tmp_path / "r.csv")]
        assert main(argv) == 1


class TestReports:
    def test_aopac_hand_example(self, tmp_path):
        pts = tmp_path / "p.csv"
        pts.write_text("beta,accuracy,parity\n1.0,0.7,0.05\n0.1,0.8,0.15\n")
        out = tmp_path / "a.json"
        assert main(["aopac", "--results", str(pts), "--delta-data", "0.2", "--baseline", "0.6",
                     "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["raw_area"] == pytest.approx(0.02, abs=1e-12)
        assert doc["normalized_area"] is None

    def test_frontier_empty(self, synth, tmp_path, caplog):
        empty = tmp_path / "e.csv"
        empty.write_text("beta,accuracy,parity\n")
        assert main(["frontier", "--results", str(empty), "--test", str(synth / "test.csv"),
                     "--out", str(tmp_path / "f")]) == 0
        assert "no trade-off points" in caplog.text
        assert (tmp_path / "f" / "pareto.csv").read_text().splitlines() == ["beta,accuracy,parity,tag"]

    def test_malformed_results(self, tmp_path):
        bad = tmp_path / "b.csv"
        bad.write_text("beta,accuracy,parity\n0.1,x,0.2\n")
        assert main(["aopac", "--results", str(bad), "--delta-data", "0.2", "--baseline", "0.5",
                     "--out", str(tmp_path / "a.json")]) == 2

    def test_bound_check_rows(self, synth, swept, tmp_path):
        out = tmp_path / "bound.csv"
        argv = ["bound-check", "--checkpoints", str(swept), "--train", str(synth / "train.csv"),
                "--test", str(synth / "test.csv"), "--probe", "both", "--probe-seeds", "1", "--out", str(out)]
        assert main(argv) == 0
        assert len(out.read_text().splitlines()) == 1 + 2 * 2
