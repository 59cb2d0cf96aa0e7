import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from mixreg.cli import main
from mixreg.io import load_matrix, load_model, save_matrix, save_model
from mixreg.model import MixtureModel


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def snapshot(directory):
    return {p.name: digest(p) for p in sorted(directory.iterdir()) if not p.name.endswith("manifest.json")}


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--samples", "300", "--seed", "1"]) == 0
    return out


class TestSynth:
    def test_files_and_shapes(self, synth_dir):
        assert {"x.bin", "y.bin", "truth_model.json", "labels.csv", "manifest.json"} <= {p.name for p in synth_dir.iterdir()}
        assert load_matrix(synth_dir / "x.bin").shape == (300, 4)
        assert load_matrix(synth_dir / "y.bin").shape == (300, 3)
        assert load_model(synth_dir / "truth_model.json").k == 3

    def test_same_seed_same_digests(self, tmp_path):
        for name in ("a", "b"):
            assert main(["synth", "--out", str(tmp_path / name), "--samples", "50", "--seed", "4", "--threads", "1"]) == 0
        assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")

    def test_zero_experts_is_usage_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--out", str(tmp_path / "o"), "--experts", "0"])
        assert exc.value.code == 2
        assert "--experts" in capsys.readouterr().err
        assert not (tmp_path / "o").exists()

    def test_manifest_contents(self, synth_dir):
        manifest = json.loads((synth_dir / "manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert manifest["seeds"] == {"generator": 1}
        assert manifest["config"]["samples"] == 300
        assert manifest["outputs"][str(synth_dir / "x.bin")] == digest(synth_dir / "x.bin")
        assert "started_at" in manifest and "tool_version" in manifest


class TestFit:
    def test_outputs_and_monotone_trace(self, synth_dir, tmp_path):
        model = tmp_path / "m.json"
        args = ["fit", "--x", str(synth_dir / "x.bin"), "--y", str(synth_dir / "y.bin"), "--experts", "3", "--model", str(model)]
        assert main(args) == 0
        trace = np.loadtxt(tmp_path / "m.trace.csv", delimiter=",", skiprows=1)
        assert trace[-1, 1] >= trace[1, 1]
        summary = json.loads((tmp_path / "m.trace.json").read_text())
        assert summary["iterations_run"] == len(trace) - 1
        manifest = json.loads((tmp_path / "m.manifest.json").read_text())
        assert manifest["inputs"][str(synth_dir / "x.bin")] == digest(synth_dir / "x.bin")

    def test_rerun_identical(self, synth_dir, tmp_path):
        for name in ("a", "b"):
            (tmp_path / name).mkdir()
            assert main(["fit", "--x", str(synth_dir / "x.bin"), "--y", str(synth_dir / "y.bin"),
                         "--seed", "2", "--threads", "1", "--model", str(tmp_path / name / "m.json")]) == 0
        assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")

    def test_single_expert_noiseless_converges(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(30, 2))
        save_matrix(tmp_path / "x.csv", X)
        save_matrix(tmp_path / "y.csv", X @ np.array([[1.0, -2.0]]).T)
        assert main(["fit", "--x", str(tmp_path / "x.csv"), "--y", str(tmp_path / "y.csv"),
                     "--experts", "1", "--model", str(tmp_path / "m.json")]) == 0
        assert json.loads((tmp_path / "m.trace.json").read_text())["converged"] is True

    def test_row_mismatch_is_usage_error_without_outputs(self, tmp_path, capsys):
        save_matrix(tmp_path / "x.csv", np.ones((4, 2)))
        save_matrix(tmp_path / "y.csv", np.ones((3, 1)))
        code = main(["fit", "--x", str(tmp_path / "x.csv"), "--y", str(tmp_path / "y.csv"), "--model", str(tmp_path / "m.json")])
        assert code == 2
        assert "rows" in capsys.readouterr().err
        assert sorted(p.name for p in tmp_path.iterdir()) == ["x.csv", "y.csv"]

    def test_missing_input_is_io_error(self, tmp_path):
        code = main(["fit", "--x", str(tmp_path / "nope.bin"), "--y", str(tmp_path / "nope.bin"), "--model", str(tmp_path / "m.json")])
        assert code == 1

    def test_bad_file_is_runtime_error(self, tmp_path, capsys):
        (tmp_path / "x.bin").write_bytes(b"garbage")
        code = main(["fit", "--x", str(tmp_path / "x.bin"), "--y", str(tmp_path / "x.bin"), "--model", str(tmp_path / "m.json")])
        assert code == 1
        assert "truncated" in capsys.readouterr().err

    def test_config_file_and_flag_precedence(self, synth_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"experts": 2, "max_iters": 3}))
        base = ["fit", "--x", str(synth_dir / "x.bin"), "--y", str(synth_dir / "y.bin"), "--config", str(cfg)]
        assert main(base + ["--model", str(tmp_path / "a.json")]) == 0
        assert load_model(tmp_path / "a.json").k == 2
        assert json.loads((tmp_path / "a.trace.json").read_text())["iterations_run"] <= 3
        assert main(base + ["--experts", "4", "--model", str(tmp_path / "b.json")]) == 0
        assert load_model(tmp_path / "b.json").k == 4

    def test_config_unknown_key(self, synth_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        with pytest.raises(SystemExit) as exc:
            main(["fit", "--x", "a", "--y", "b", "--model", "m", "--config", str(cfg)])
        assert exc.value.code == 2


class TestPredictEvaluate:
    def test_single_expert_predict_is_linear_map(self, tmp_path):
        W = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]])
        save_model(tmp_path / "m.json", MixtureModel(W[None], np.ones((1, 3)), np.zeros((1, 2))))
        X = np.random.default_rng(1).normal(size=(5, 2))
        save_matrix(tmp_path / "x.csv", X)
        assert main(["predict", "--model", str(tmp_path / "m.json"), "--x", str(tmp_path / "x.csv"),
                     "--out", str(tmp_path / "p.csv")]) == 0
        np.testing.assert_allclose(load_matrix(tmp_path / "p.csv"), X @ W.T, rtol=1e-15)

    def test_evaluate_truth_is_perfect(self, tmp_path):
        Y = np.random.default_rng(2).normal(size=(6, 20))
        save_matrix(tmp_path / "y.csv", Y)
        noisy = Y + np.random.default_rng(3).normal(size=Y.shape)
        save_matrix(tmp_path / "n.csv", noisy)
        prefix = tmp_path / "rep"
        assert main(["evaluate", "--y-true", str(tmp_path / "y.csv"), "--pred", f"truth={tmp_path / 'y.csv'}",
                     "--pred", f"noisy={tmp_path / 'n.csv'}", "--out-prefix", str(prefix)]) == 0
        report = json.loads((tmp_path / "rep.json").read_text())
        truth_rows = [r for r in report["table"] if r["method"] == "truth"]
        assert len(truth_rows) == 7
        for row in truth_rows:
            assert all(row[c] == 1.0 for c in row if c not in ("method", "k"))
        assert report["regression"]["truth"] == {"mae": 0.0, "r2": 1.0}
        assert report["anova_mae"]["df_between"] == 1
        assert (tmp_path / "rep.table.csv").read_text().startswith("method,k,macro_precision")

    def test_bad_pred_spec(self, tmp_path):
        save_matrix(tmp_path / "y.csv", np.ones((2, 2)))
        code = main(["evaluate", "--y-true", str(tmp_path / "y.csv"), "--pred", "nopath", "--out-prefix", str(tmp_path / "r")])
        assert code == 2
        assert not (tmp_path / "r.json").exists()


class TestOtherCommands:
    def test_select_k(self, synth_dir, tmp_path):
        out = tmp_path / "bic.csv"
        assert main(["select-k", "--x", str(synth_dir / "x.bin"), "--y", str(synth_dir / "y.bin"), "--k-min", "1",
                     "--k-max", "3", "--restarts", "1", "--max-iters", "30", "--cv-folds", "3", "--out", str(out)]) == 0
        header = out.read_text().splitlines()[0].split(",")
        assert header[:7] == ["k", "d", "n_samples", "log_likelihood", "bic", "log10_bic", "seed_of_best"]
        report = json.loads(out.with_suffix(".json").read_text())
        assert report["best_k"] in (1, 2, 3) and len(report["entries"]) == 3
        assert "cv_mae" in report["entries"][0]

    def test_select_k_range_order(self, synth_dir, tmp_path):
        code = main(["select-k", "--x", str(synth_dir / "x.bin"), "--y", str(synth_dir / "y.bin"),
                     "--k-min", "3", "--k-max", "2", "--out", str(tmp_path / "b.csv")])
        assert code == 2

    def test_baseline_ridge_grid(self, synth_dir, tmp_path):
        model = tmp_path / "r.json"
        assert main(["baseline-ridge", "--x", str(synth_dir / "x.bin"), "--y", str(synth_dir / "y.bin"),
                     "--lambda-grid", "0.01,1,10", "--model", str(model)]) == 0
        summary = json.loads((tmp_path / "r.ridge.json").read_text())
        assert summary["lambda"] in (0.01, 1.0, 10.0)
        assert load_model(model).lam == summary["lambda"]

    def test_analyze(self, tmp_path):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(40, 2))
        Y = rng.normal(size=(40, 6))
        save_matrix(tmp_path / "x.csv", X)
        save_matrix(tmp_path / "y.csv", Y)
        save_model(tmp_path / "m.json", MixtureModel(np.zeros((2, 6, 2)), np.ones((2, 6)), np.array([[3.0, 0], [-3.0, 0]])))
        (tmp_path / "atlas.csv").write_text("dim_index,region_label\n" + "".join(f"{d},R{d % 3}\n" for d in range(6)))
        out = tmp_path / "an"
        assert main(["analyze", "--x", str(tmp_path / "x.csv"), "--y", str(tmp_path / "y.csv"), "--model", str(tmp_path / "m.json"),
                     "--atlas", str(tmp_path / "atlas.csv"), "--score-threshold", "0", "--out-dir", str(out)]) == 0
        regions = json.loads((out / "regions.json").read_text())
        assert len(regions["experts"]) == 2
        assert set(regions["common_regions"]) <= {"R0", "R1", "R2"}
        assert (out / "assignments.csv").read_text().startswith("id,expert,p0,p1")

    def test_cluster(self, tmp_path):
        X = np.r_[np.tile([1.0, 0.0], (3, 1)), np.tile([0.0, 1.0], (3, 1))]
        save_matrix(tmp_path / "e.csv", X, ids=list("abcdef"))
        assert main(["cluster", "--data", str(tmp_path / "e.csv"), "--k", "2", "--out", str(tmp_path / "cl")]) == 0
        members = json.loads((tmp_path / "cl.json").read_text())["members"]
        assert sorted(sorted(v) for v in members.values()) == [list("abc"), list("def")]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mixreg", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "mixreg" in proc.stdout
