import json
from pathlib import Path

import pytest

from cli import run
from cli.manifest import content_hash
from config.interfaces import DivergenceError
from config.sections import load_config
from diffusion.schedule import build_schedule

from conftest import TINY_MODEL


@pytest.fixture
def toy_run(tmp_path):
    assert run(["make-toy-data", "--scenes", "6", "--captions", "2", "--out", str(tmp_path / "toy")]) == 0
    toy = tmp_path / "toy"
    config = {
        "schedule": {"T": 100, "subset_count": 10},
        "model": TINY_MODEL,
        "training": {"batch_size": 4, "epochs_max": 1, "early_stop": False},
        "infer": {"stages": 3},
        "data": {
            "train": str(toy / "train.jsonl"),
            "val": str(toy / "val.jsonl"),
            "features": str(toy / "features.cdlf"),
            "vocab": str(toy / "vocab.txt"),
        },
    }
    (tmp_path / "toy.json").write_text(json.dumps(config))
    return tmp_path


def train(tmp_path, out="run", *extra):
    return run(["train", "--config", str(tmp_path / "toy.json"), "--out", str(tmp_path / out), *extra])


class TestMakeToyData:

    def test_writes_loadable_corpus(self, toy_run):
        toy = toy_run / "toy"
        for name in ("train.jsonl", "val.jsonl", "features.cdlf", "vocab.txt", "manifest.json"):
            assert (toy / name).exists(), name
        manifest = json.loads((toy / "manifest.json").read_text())
        assert manifest["command"] == "make-toy-data"

    def test_repeatable(self, tmp_path):
        for name in ("a", "b"):
            assert run(["make-toy-data", "--seed", "3", "--out", str(tmp_path / name)]) == 0
        for name in ("train.jsonl", "val.jsonl", "features.cdlf", "vocab.txt"):
            assert content_hash(tmp_path / "a" / name) == content_hash(tmp_path / "b" / name)

    def test_single_scene_is_usage_error(self, tmp_path):
        assert run(["make-toy-data", "--scenes", "1", "--out", str(tmp_path)]) == 1

    def test_bad_flag(self):
        with pytest.raises(SystemExit) as exc:
            run(["make-toy-data", "--scenes", "many"])
        assert exc.value.code == 1


class TestTrain:

    def test_outputs(self, toy_run):
        assert train(toy_run) == 0
        out = toy_run / "run"
        assert (out / "metrics.csv").read_text().count("\n") == 2
        assert (out / "checkpoints" / "final" / "params.bin").exists()
        assert (out / "checkpoints" / "last" / "trainer.pt").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["model"]["vocab_size"] > 4
        assert str(toy_run / "toy" / "train.jsonl") in manifest["inputs"]

    def test_metrics_repeatable(self, toy_run):
        assert train(toy_run, "a") == 0
        assert train(toy_run, "b") == 0
        assert (toy_run / "a" / "metrics.csv").read_bytes() == (toy_run / "b" / "metrics.csv").read_bytes()

    def test_resume(self, toy_run):
        assert train(toy_run) == 0
        assert train(toy_run, "run", "--resume", "--set", "training.epochs_max=2") == 0
        assert (toy_run / "run" / "metrics.csv").read_text().count("\n") == 3

    def test_resume_keeps_first_manifest(self, toy_run):
        assert train(toy_run) == 0
        first = (toy_run / "run" / "manifest.json").read_bytes()
        assert train(toy_run, "run", "--resume", "--set", "training.epochs_max=2") == 0
        assert (toy_run / "run" / "manifest.json").read_bytes() == first
        resumed = json.loads((toy_run / "run" / "manifest.resume-0001.json").read_text())
        assert resumed["command"] == "train"
        assert resumed["config"]["training"]["epochs_max"] == 2

    def test_memorize_config_runs_to_step_limit(self):
        config = load_config(Path(__file__).parent.parent / "configs" / "toy_memorize.json")
        assert not config.training.early_stop
        assert config.training.max_steps == 2000

    def test_missing_config(self, tmp_path):
        assert run(["train", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == 1

    def test_invalid_override(self, toy_run):
        assert train(toy_run, "run", "--set", "training.batch_size=0") == 1

    def test_divergence_exit_code(self, toy_run, monkeypatch):
        def diverge(*args, **kwargs):
            raise DivergenceError("non-finite training loss at step 0")

        monkeypatch.setattr("cli.commands.Trainer.fit", diverge)
        assert train(toy_run) == 2


@pytest.fixture
def trained(toy_run):
    assert train(toy_run) == 0
    return toy_run


def checkpoint_args(tmp_path):
    return ["--checkpoint", str(tmp_path / "run" / "checkpoints" / "final"),
            "--features", str(tmp_path / "toy" / "features.cdlf")]


class TestGenerate:

    def test_repeatable_captions(self, trained):
        records = str(trained / "toy" / "train.jsonl")
        for name in ("g1", "g2"):
            assert run(["generate", *checkpoint_args(trained), "--records", records, "--seed", "7",
                        "--out", str(trained / name)]) == 0
        lines = (trained / "g1" / "captions.jsonl").read_text().splitlines()
        assert len(lines) == 5
        assert all(set(json.loads(line)) == {"key", "caption"} for line in lines)
        assert content_hash(trained / "g1" / "captions.jsonl") == content_hash(trained / "g2" / "captions.jsonl")

    def test_selected_keys(self, trained):
        records = trained / "toy" / "train.jsonl"
        key = json.loads(records.read_text().splitlines()[0])["key"]
        assert run(["generate", *checkpoint_args(trained), "--records", str(records), "--keys", key,
                    "--stages", "2", "--out", str(trained / "g")]) == 0
        lines = (trained / "g" / "captions.jsonl").read_text().splitlines()
        assert [json.loads(line)["key"] for line in lines] == [key]

    def test_unknown_key(self, trained):
        assert run(["generate", *checkpoint_args(trained), "--records", str(trained / "toy" / "train.jsonl"),
                    "--keys", "no-such-scene", "--out", str(trained / "g")]) == 1

    def test_missing_checkpoint(self, toy_run):
        assert run(["generate", *checkpoint_args(toy_run), "--records", str(toy_run / "toy" / "train.jsonl"),
                    "--out", str(toy_run / "g")]) == 1


class TestEvaluate:

    def test_report(self, trained):
        assert run(["evaluate", *checkpoint_args(trained), "--dataset", str(trained / "toy" / "val.jsonl"),
                    "--out", str(trained / "e")]) == 0
        report = json.loads((trained / "e" / "report.json").read_text())
        assert set(report) == {"bleu4", "n", "brevity_penalty", "precisions", "length_ratio"}
        assert isinstance(report["n"], int) and 0.0 <= report["bleu4"] <= 1.0
        assert (trained / "e" / "sentences.csv").read_text().startswith("key,caption,references,bleu4")

    def test_empty_dataset(self, trained):
        (trained / "empty.jsonl").write_text("")
        assert run(["evaluate", *checkpoint_args(trained), "--dataset", str(trained / "empty.jsonl"),
                    "--out", str(trained / "e")]) == 1


class TestInspectSchedule:

    def test_table(self, tmp_path, capsys):
        assert run(["inspect-schedule", "--set", "schedule.T=50", "--set", "schedule.subset_count=50", "--out", str(tmp_path)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "t,beta,alpha_bar"
        rows = [line.split(",") for line in lines[1:]]
        assert len(rows) == 50
        schedule = build_schedule("linear", 50, subset_count=50)
        bars = [float(r[2]) for r in rows]
        assert all(a > b for a, b in zip(bars, bars[1:]))
        for t, beta, bar in rows:
            assert float(beta) == schedule.beta(int(t))
            assert float(bar) == schedule.alpha_bar(int(t))
        assert (tmp_path / "schedule.csv").read_text().splitlines() == lines
