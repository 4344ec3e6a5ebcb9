import json
import subprocess
import sys

import pytest

from matsim.cli import build_parser, main


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    rc = main(["gen-synth", "--materials", "12", "--views", "4",
               "--latent-dim", "2", "--descriptor-dim", "6",
               "--answers", "600", "--seed", "0", "--out", str(root)])
    assert rc == 0
    return root


@pytest.fixture(scope="module")
def checkpoint(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    rc = main(["train", "--data-dir", str(dataset),
               "--answers", str(dataset / "answers.jsonl"),
               "--epochs", "4", "--hidden", "8", "--feature-dim", "8",
               "--seed", "0", "--out", str(out)])
    assert rc == 0
    return out / "model.ckpt"


class TestGenSynth:
    def test_outputs(self, dataset):
        for name in ("manifest.json", "descriptors.pdsc", "truth.json",
                     "answers.jsonl"):
            assert (dataset / name).exists(), name
        manifest = json.loads((dataset / "manifest.json").read_text())
        assert len(manifest["materials"]) == 12
        assert len(manifest["views"]) == 48

    def test_seed_reproducible(self, dataset, tmp_path):
        rc = main(["gen-synth", "--materials", "12", "--views", "4",
                   "--latent-dim", "2", "--descriptor-dim", "6",
                   "--answers", "600", "--seed", "0", "--out", str(tmp_path)])
        assert rc == 0
        for name in ("manifest.json", "descriptors.pdsc", "truth.json",
                     "answers.jsonl"):
            assert (tmp_path / name).read_bytes() \
                == (dataset / name).read_bytes(), name

    def test_different_seed_differs(self, dataset, tmp_path):
        main(["gen-synth", "--materials", "12", "--views", "4",
              "--latent-dim", "2", "--descriptor-dim", "6",
              "--seed", "1", "--out", str(tmp_path)])
        assert (tmp_path / "descriptors.pdsc").read_bytes() \
            != (dataset / "descriptors.pdsc").read_bytes()


class TestSplit:
    def test_partition(self, dataset, tmp_path):
        rc = main(["split", "--data-dir", str(dataset),
                   "--holdout", "shape03", "--out", str(tmp_path)])
        assert rc == 0
        train = json.loads((tmp_path / "train" / "manifest.json").read_text())
        held = json.loads((tmp_path / "held" / "manifest.json").read_text())
        assert len(train["views"]) == 36
        assert len(held["views"]) == 12
        assert all(v["shape"] == "shape03" for v in held["views"])


class TestTrainEval:
    def test_train_outputs(self, dataset, checkpoint):
        out = checkpoint.parent
        assert checkpoint.exists()
        trace = (out / "loss_trace.csv").read_text().splitlines()
        assert trace[0] == "epoch,loss"
        assert len(trace) == 5  # header + one loss value per epoch
        assert (out / "loss_trace.png").stat().st_size > 0

    def test_eval_checkpoint(self, dataset, checkpoint, tmp_path, capsys):
        rc = main(["eval", "--data-dir", str(dataset),
                   "--answers", str(dataset / "answers.jsonl"),
                   "--checkpoint", str(checkpoint), "--out", str(tmp_path)])
        assert rc == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        for key in ("raw_accuracy", "majority_accuracy", "perplexity_raw",
                    "perplexity_majority"):
            assert key in rep
        assert 0.0 <= rep["majority_accuracy"] <= 1.0

    def test_eval_oracle_majority_perfect(self, dataset, tmp_path):
        rc = main(["eval", "--data-dir", str(dataset),
                   "--answers", str(dataset / "answers.jsonl"),
                   "--out", str(tmp_path)])
        assert rc == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["majority_accuracy"] == 1.0

    def test_embed(self, dataset, checkpoint, tmp_path):
        rc = main(["embed", "--data-dir", str(dataset),
                   "--checkpoint", str(checkpoint), "--out", str(tmp_path)])
        assert rc == 0
        lines = (tmp_path / "features.csv").read_text().splitlines()
        assert lines[0].startswith("view_id,f0,")
        assert len(lines) == 49


class TestTste:
    def test_fit_and_figure(self, dataset, tmp_path):
        rc = main(["tste", "--answers", str(dataset / "answers.jsonl"),
                   "--max-iters", "100", "--seed", "0",
                   "--out", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "embedding.csv").exists()
        sidecar = json.loads((tmp_path / "embedding.json").read_text())
        assert sidecar["dim"] == 2
        assert 0 <= sidecar["satisfied_fraction"] <= 1
        assert (tmp_path / "embedding.png").stat().st_size > 0


class TestSampleNext:
    def test_bootstrap_then_informed(self, dataset, tmp_path):
        rc = main(["sample-next", "--data-dir", str(dataset),
                   "--out", str(tmp_path), "--seed", "0"])
        assert rc == 0
        plan = json.loads((tmp_path / "plan_000.json").read_text())
        assert plan["iteration"] == 0
        assert plan["mean_information_gain"] == 0.0
        rc = main(["sample-next", "--data-dir", str(dataset),
                   "--answers", str(dataset / "answers.jsonl"),
                   "--iteration", "1", "--out", str(tmp_path), "--seed", "1"])
        assert rc == 0
        plan = json.loads((tmp_path / "plan_001.json").read_text())
        assert plan["mean_information_gain"] > 0.0
        conv = (tmp_path / "convergence.csv").read_text().splitlines()
        assert conv[0] == "iteration,mean_ig"
        assert len(conv) == 3
        assert (tmp_path / "convergence.png").stat().st_size > 0


class TestAnalysisCommands:
    def test_suggest(self, dataset, checkpoint, capsys):
        rc = main(["suggest", "--data-dir", str(dataset),
                   "--checkpoint", str(checkpoint),
                   "--reference", "m000", "--band", "near", "--count", "2"])
        assert rc == 0
        picks = capsys.readouterr().out.split()
        assert len(picks) == 2
        assert all(p.startswith("m") and p != "m000" for p in picks)

    def test_project(self, dataset, checkpoint, tmp_path):
        rc = main(["project", "--data-dir", str(dataset),
                   "--checkpoint", str(checkpoint), "--out", str(tmp_path)])
        assert rc == 0
        lines = (tmp_path / "projection.csv").read_text().splitlines()
        assert lines[0] == "material_id,x,y"
        assert len(lines) == 13
        assert (tmp_path / "projection.png").stat().st_size > 0

    def test_cluster(self, dataset, checkpoint, tmp_path):
        rc = main(["cluster", "--data-dir", str(dataset),
                   "--checkpoint", str(checkpoint), "--k", "3",
                   "--out", str(tmp_path)])
        assert rc == 0
        lines = (tmp_path / "clusters.csv").read_text().splitlines()
        assert lines[0] == "material_id,cluster"
        assert len(lines) == 13
        assert (tmp_path / "clusters.png").stat().st_size > 0

    def test_elbow(self, dataset, checkpoint, tmp_path):
        rc = main(["elbow", "--data-dir", str(dataset),
                   "--checkpoint", str(checkpoint), "--out", str(tmp_path)])
        assert rc == 0
        result = json.loads((tmp_path / "elbow.json").read_text())
        assert result["k"] >= 1
        evs = result["explained_variance"]
        assert all(b >= a - 1e-12 for a, b in zip(evs, evs[1:]))
        assert (tmp_path / "elbow.png").stat().st_size > 0

    def test_hopkins(self, dataset, checkpoint, tmp_path):
        rc = main(["hopkins", "--data-dir", str(dataset),
                   "--checkpoint", str(checkpoint),
                   "--repetitions", "10", "--out", str(tmp_path)])
        assert rc == 0
        result = json.loads((tmp_path / "hopkins.json").read_text())
        assert 0.0 < result["hopkins"] < 1.0

    def test_summarize(self, dataset, checkpoint, tmp_path, capsys):
        rc = main(["summarize", "--data-dir", str(dataset),
                   "--checkpoint", str(checkpoint), "--k", "3",
                   "--out", str(tmp_path)])
        assert rc == 0
        picks = (tmp_path / "summary.csv").read_text().splitlines()
        assert picks[0] == "material_id"
        assert len(picks) == 4


class TestGamut:
    def test_inline_problem(self, tmp_path):
        problem = tmp_path / "problem.json"
        problem.write_text(json.dumps({
            "target": [0.4, 0.6],
            "basis": [[1.0, 0.0], [0.0, 1.0]]}))
        rc = main(["gamut", "--problem", str(problem), "--out", str(tmp_path)])
        assert rc == 0
        sol = json.loads((tmp_path / "gamut_solution.json").read_text())
        assert sol["objective"] < 1e-10
        assert abs(sum(sol["weights"]) - 1.0) < 1e-9
        assert (tmp_path / "gamut_trace.png").stat().st_size > 0


class TestExitCodes:
    def test_missing_dataset_is_validation_error(self, tmp_path):
        rc = main(["eval", "--data-dir", str(tmp_path / "nope"),
                   "--answers", str(tmp_path / "nope.jsonl")])
        assert rc == 1

    def test_bad_hidden_spec(self, dataset, tmp_path):
        rc = main(["train", "--data-dir", str(dataset),
                   "--answers", str(dataset / "answers.jsonl"),
                   "--hidden", "abc", "--out", str(tmp_path)])
        assert rc == 1

    def test_invalid_k(self, dataset, checkpoint, tmp_path):
        rc = main(["cluster", "--data-dir", str(dataset),
                   "--checkpoint", str(checkpoint), "--k", "99",
                   "--out", str(tmp_path)])
        assert rc == 1

    def test_unbuildable_batch_is_runtime_error(self, dataset, tmp_path):
        # one answered triple over 3 materials cannot fit in 2-material
        # batches, so batch construction exhausts its retries
        answers = tmp_path / "one.jsonl"
        answers.write_text(json.dumps({
            "reference": "m000", "option_a": "m001", "option_b": "m002",
            "chosen": "A", "worker": "w", "kind": "trial",
            "timestamp": ""}) + "\n")
        rc = main(["train", "--data-dir", str(dataset),
                   "--answers", str(answers), "--epochs", "1",
                   "--batch-materials", "2", "--hidden", "4",
                   "--feature-dim", "4", "--out", str(tmp_path)])
        assert rc == 2


class TestHelp:
    def test_parser_lists_all_commands(self):
        parser = build_parser()
        text = parser.format_help()
        for cmd in ("gen-synth", "split", "train", "eval", "embed", "tste",
                    "sample-next", "suggest", "project", "cluster", "elbow",
                    "hopkins", "summarize", "gamut", "serve"):
            assert cmd in text

    def test_console_entry_help(self):
        proc = subprocess.run([sys.executable, "-m", "matsim.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "Perceptual material-appearance similarity" in proc.stdout

    def test_subcommand_shows_defaults(self):
        proc = subprocess.run(
            [sys.executable, "-m", "matsim.cli", "train", "--help"],
            capture_output=True, text=True,
            env={"PATH": "/usr/bin:/bin", "COLUMNS": "100"})
        assert proc.returncode == 0
        assert "(default: 80)" in proc.stdout
