import csv
import json

import numpy as np
import pytest

from scenerec import cli
from scenerec.audio import Waveform, write_wav
from scenerec.dataset import DatasetManifest
from scenerec.synthetic import _ENV_BANDS, babble, band_noise
from scenerec.weightfile import load_weights


def run(argv):
    return cli.main([str(a) for a in argv])


def resolve(argv):
    return cli.resolve([str(a) for a in argv])


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    (root / "speech").mkdir()
    for i in range(3):
        write_wav(babble(71.0, seed=i), root / "speech" / f"rec{i}.wav")
    corpora = {}
    for label, (lo, hi) in _ENV_BANDS.items():
        (root / label.value).mkdir()
        write_wav(band_noise(lo, hi, 60.0, 0.02, seed=1), root / label.value / "a.wav")
        corpora[label.value] = {"dir": label.value}
    (root / "sources.json").write_text(json.dumps({"speech": {"dir": "speech"}, "corpora": corpora}))
    return root


@pytest.fixture(scope="module")
def dataset(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert run(["--seed", 3, "build-dataset", "--sources", corpus / "sources.json", "--out", out]) == 0
    return out


@pytest.fixture(scope="module")
def model_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "random.weights"
    assert run(["inspect-model", "--random", 14, "--output", path]) == 0
    return path


class TestHelp:
    def test_top_level(self, capsys):
        assert run(["--help"]) == 0
        text = capsys.readouterr().out
        for name in cli.COMMANDS:
            assert name in text
        for opt in cli.GLOBAL_OPTIONS:
            assert opt.flags[0] in text

    @pytest.mark.parametrize("command", list(cli.COMMANDS))
    def test_every_flag_documented(self, command, capsys):
        assert run([command, "--help"]) == 0
        text = capsys.readouterr().out
        for opt in cli.COMMANDS[command][1]:
            assert opt.flags[0] in text

    @pytest.mark.parametrize("command", list(cli.COMMANDS))
    def test_readme_lists_every_flag(self, command):
        from pathlib import Path
        readme = (Path(__file__).parents[1] / "README.md").read_text()
        assert f"scenerec {command}" in readme or f"`{command}`" in readme
        for opt in cli.COMMANDS[command][1]:
            assert opt.flags[0] in readme

    def test_version(self, capsys):
        assert run(["--version"]) == 0
        assert "scenerec" in capsys.readouterr().out


class TestExitCodes:
    def test_usage_errors(self, capsys):
        assert run([]) == 1
        assert run(["no-such-command"]) == 1
        assert run(["infer", "--wav", "x.wav"]) == 1
        assert run(["bench", "--model", "m", "--out", "o", "--repeats", "many"]) == 1
        assert run(["inspect-model"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_data_errors(self, tmp_path, model_file):
        assert run(["infer", "--model", tmp_path / "missing.weights", "--wav", tmp_path / "x.wav"]) == 2
        (tmp_path / "bad.weights").write_bytes(b"nope")
        assert run(["inspect-model", "--model", tmp_path / "bad.weights"]) == 2
        (tmp_path / "stereo.wav").write_bytes(b"RIFF")
        assert run(["infer", "--model", model_file, "--wav", tmp_path / "stereo.wav"]) == 2

    def test_internal_error(self, monkeypatch, model_file, tmp_path):
        def boom(glob, opts):
            raise RuntimeError("boom")
        monkeypatch.setitem(cli.HANDLERS, "inspect-model", boom)
        assert run(["inspect-model", "--model", model_file]) == 3


class TestConfigLayering:
    def test_defaults_file_flags(self, tmp_path, monkeypatch):
        monkeypatch.delenv(cli.CONFIG_ENV, raising=False)
        _, glob, opts = resolve(["bench", "--model", "m", "--out", "o"])
        assert glob["seed"] == 0 and opts["repeats"] == 5 and opts["durations"] == [5.0, 10.0, 20.0, 30.0]
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"seed": 7, "bench": {"repeats": 9, "durations": [1, 2]}}))
        _, glob, opts = resolve(["--config", cfg, "bench", "--model", "m", "--out", "o"])
        assert glob["seed"] == 7 and opts["repeats"] == 9 and opts["durations"] == [1, 2]
        _, glob, opts = resolve(["--config", cfg, "--seed", "1", "bench", "--model", "m", "--out", "o",
                                     "--repeats", "2"])
        assert glob["seed"] == 1 and opts["repeats"] == 2 and opts["durations"] == [1, 2]

    def test_global_options_after_command(self, monkeypatch):
        monkeypatch.delenv(cli.CONFIG_ENV, raising=False)
        _, glob, _ = resolve(["bench", "--model", "m", "--out", "o", "--seed", "7", "--log-level", "ERROR"])
        assert glob["seed"] == 7 and glob["log_level"] == "ERROR"
        _, glob, _ = resolve(["--seed", "5", "bench", "--model", "m", "--out", "o"])
        assert glob["seed"] == 5

    def test_environment_variable(self, tmp_path, monkeypatch):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"infer": {"format": "csv"}}))
        monkeypatch.setenv(cli.CONFIG_ENV, str(cfg))
        _, _, opts = resolve(["infer", "--model", "m", "--wav", "w"])
        assert opts["format"] == "csv"

    def test_required_from_file(self, tmp_path, monkeypatch):
        monkeypatch.delenv(cli.CONFIG_ENV, raising=False)
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"inspect-features": {"wav": "a.wav"}}))
        _, _, opts = resolve(["--config", cfg, "inspect-features"])
        assert opts["wav"] == "a.wav"

    @pytest.mark.parametrize("doc", [{"sed": 1}, {"train": {"lr": 1}}, {"train": 3}, [1, 2]])
    def test_unknown_keys_rejected(self, tmp_path, doc, model_file):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(doc))
        with pytest.raises(cli.UsageError):
            resolve(["--config", cfg, "inspect-model", "--model", "m"])
        assert run(["--config", cfg, "inspect-model", "--model", model_file]) == 1

    def test_missing_or_broken_file(self, tmp_path):
        assert run(["--config", tmp_path / "none.json", "inspect-model", "--model", "m"]) == 1
        (tmp_path / "bad.json").write_text("{")
        assert run(["--config", tmp_path / "bad.json", "inspect-model", "--model", "m"]) == 1


class TestBuildDataset:
    def test_counts_and_outputs(self, dataset):
        m = DatasetManifest.load(dataset)
        counts = m.label_counts()
        assert sum(counts.values()) == len(m.clips) == 45
        assert counts["cocktail_party"] == 6 and counts["interfering_speakers"] == 3
        assert counts["in_traffic"] == 3 and counts["speech_in_traffic"] == 3
        assert all((dataset / c.path).exists() for c in m.clips)
        assert json.loads((dataset / "config.json").read_text())["seed"] == 3
        assert all(c.split in ("train", "validation", "test") for c in m.clips)

    def test_deterministic(self, corpus, dataset, tmp_path):
        assert run(["build-dataset", "--sources", corpus / "sources.json", "--out", tmp_path, "--seed", 3]) == 0
        assert (tmp_path / "manifest.json").read_text() == (dataset / "manifest.json").read_text()
        for c in DatasetManifest.load(dataset).clips[:5]:
            assert (tmp_path / c.path).read_bytes() == (dataset / c.path).read_bytes()

    def test_bad_descriptor(self, tmp_path):
        (tmp_path / "s.json").write_text(json.dumps({"speech": {"dir": "none"}, "corpora": {}, "extra": 1}))
        assert run(["build-dataset", "--sources", tmp_path / "s.json", "--out", tmp_path / "o"]) == 2


class TestModelCommands:
    def test_inspect_and_convert(self, model_file, tmp_path, capsys):
        capsys.readouterr()
        assert run(["inspect-model", "--model", model_file]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["classes"] == 14 and info["parameters"] == 3231694 and info["dtype"] == "f32"
        half = tmp_path / "half.weights"
        assert run(["inspect-model", "--model", model_file, "--convert", "f16", "--output", half]) == 0
        info16 = json.loads(capsys.readouterr().out)
        assert info16["dtype"] == "f16" and info16["file_bytes"] < 0.55 * info["file_bytes"]
        assert load_weights(half).dtype == "f16"

    def test_infer_json_and_csv(self, model_file, tmp_path, capsys):
        wav = tmp_path / "ten.wav"
        write_wav(Waveform(np.random.default_rng(0).uniform(-0.1, 0.1, 160000).astype(np.float32)), wav)
        capsys.readouterr()
        assert run(["infer", "--model", model_file, "--wav", wav]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert len(doc["windows"]) == 20 and all(len(w["scores"]) == 14 for w in doc["windows"])
        assert doc["windows"][1]["start_s"] == 0.48
        out = tmp_path / "scores.csv"
        assert run(["infer", "--model", model_file, "--wav", wav, "--format", "csv", "--aggregate", "softmax",
                    "--out", out]) == 0
        rows = list(csv.reader(out.open()))
        assert len(rows) == 1 + 20 + 1 and len(rows[0]) == 2 + 14
        assert sum(float(v) for v in rows[-1][2:]) == pytest.approx(1.0)
        assert json.loads((tmp_path / "scores.csv.config.json").read_text())["infer"]["aggregate"] == "softmax"

    def test_inspect_features(self, tmp_path, capsys):
        wav = tmp_path / "two.wav"
        write_wav(Waveform(np.zeros(32000, np.float32)), wav)
        capsys.readouterr()
        assert run(["inspect-features", "--wav", wav, "--out", tmp_path / "p"]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["windows"] == 4 and info["patch_shape"] == [96, 64]
        assert info["patches"][0]["max"] == pytest.approx(np.log(0.001), abs=1e-6)
        assert len(list((tmp_path / "p").glob("*.patch"))) == 4

    def test_bench(self, model_file, tmp_path):
        assert run(["bench", "--model", model_file, "--durations", 1, 2, "--repeats", 1, "--out", tmp_path]) == 0
        data = json.loads((tmp_path / "latency.json").read_text())
        assert len(data["mean_ms"]) == 2 and data["load_ms"] > 0


class TestTrainEval:
    def test_train_then_eval(self, dataset, tmp_path):
        run_dir = tmp_path / "run"
        assert run(["--seed", 2, "train", "--dataset", dataset, "--out", run_dir, "--max-epochs", 2,
                    "--no-augment", "--lr", 1e-3]) == 0
        history = (run_dir / "history.csv").read_text().splitlines()
        assert history[0] == "epoch,lr,train_loss,val_loss,val_map,val_acc" and len(history) == 3
        saved = json.loads((run_dir / "config.json").read_text())
        assert saved["train"]["learning_rate"] == 1e-3 and saved["seed"] == 2
        # the saved config replays as a config file
        _, glob, opts = resolve(["--config", run_dir / "config.json", "train"])
        assert opts["max_epochs"] == 2 and glob["seed"] == 2

        report_dir = tmp_path / "report"
        assert run(["eval", "--model", run_dir / "best.weights", "--dataset", dataset, "--out", report_dir,
                    "--gain-sweep"]) == 0
        report = json.loads((report_dir / "report.json").read_text())
        test_clips = len(DatasetManifest.load(dataset).select("test"))
        assert int(np.sum(report["confusion_matrix"])) == report["window_count"] == 20 * test_clips
        for name in ("confusion.csv", "pr_curves.csv", "report.svg", "config.json"):
            assert (report_dir / name).exists()
        sweep = (report_dir / "gain_sweep.csv").read_text().splitlines()
        assert len(sweep) == 10
        zero = next(r for r in csv.DictReader(sweep) if float(r["gain_db"]) == 0.0)
        assert float(zero["mAP"]) == report["mAP"]

    def test_eval_class_mismatch(self, dataset, tmp_path):
        small = tmp_path / "c3.weights"
        assert run(["inspect-model", "--random", 3, "--output", small]) == 0
        assert run(["eval", "--model", small, "--dataset", dataset, "--out", tmp_path / "r"]) == 2
