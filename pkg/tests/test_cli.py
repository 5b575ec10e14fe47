import csv

import pytest

from avfusion.cli import main
from avfusion.evaluation import read_report_csv

FAST = ["--config", "configs/desk.cfg", "--set", "synth.n_samples=20", "--set", "schedule.audio.epochs=3", "--set", "schedule.fusion.epochs=2"]


def run(*args, cfg=FAST):
    return main([*cfg, *map(str, args)])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--out", root / "corpus") == 0
    assert run("preprocess", "--manifest", root / "corpus/manifest.jsonl", "--out", root / "proc") == 0
    return root


def data_args(work):
    return ["--manifest", work / "corpus/manifest.jsonl", "--data", work / "proc"]


@pytest.fixture(scope="module")
def trained(work):
    assert run("train", *data_args(work), "--stage", "audio", "--checkpoint-out", work / "ck/audio.ckpt") == 0
    assert run("train", *data_args(work), "--stage", "fusion", "--audio-checkpoint", work / "ck/audio.ckpt",
               "--checkpoint-out", work / "ck/fusion.ckpt") == 0
    assert run("train", *data_args(work), "--stage", "video", "--checkpoint-out", work / "ck/video.ckpt") == 0
    return work / "ck"


class TestSynth:
    def test_manifest_written(self, work, capsys):
        lines = (work / "corpus/manifest.jsonl").read_text().splitlines()
        assert len(lines) == 20

    def test_repeatable(self, work, tmp_path):
        assert run("synth", "--out", tmp_path / "again") == 0
        assert (tmp_path / "again/manifest.jsonl").read_bytes() == (work / "corpus/manifest.jsonl").read_bytes()
        assert (tmp_path / "again/s0003/audio.wav").read_bytes() == (work / "corpus/s0003/audio.wav").read_bytes()

    def test_unwritable(self, tmp_path):
        (tmp_path / "file").write_text("x")
        assert run("synth", "--out", tmp_path / "file/sub") != 0
        assert not (tmp_path / "file/sub").exists()


class TestPreprocess:
    def test_spectrograms(self, work, tmp_path):
        assert run("preprocess", "--manifest", work / "corpus/manifest.jsonl", "--out", tmp_path / "p", "--emit-spectrograms") == 0
        assert len(list((tmp_path / "p").glob("*_spectrogram.png"))) == 20

    def test_corrupt_wav_named(self, work, tmp_path, capsys):
        assert run("synth", "--out", tmp_path / "c") == 0
        (tmp_path / "c/s0002/audio.wav").write_bytes(b"RIFF")
        assert run("preprocess", "--manifest", tmp_path / "c/manifest.jsonl", "--out", tmp_path / "p") != 0
        assert "s0002" in capsys.readouterr().err


class TestTrain:
    def test_checkpoints_and_histories(self, trained):
        for name in ("audio", "fusion", "video"):
            assert (trained / f"{name}.ckpt").is_file()
            assert (trained / f"{name}.ckpt.meta").is_file()
            assert (trained / f"{name}_history.csv").is_file()

    def test_fusion_without_audio(self, work, tmp_path, capsys):
        code = run("train", *data_args(work), "--stage", "fusion", "--checkpoint-out", tmp_path / "f.ckpt")
        assert code == 2
        assert "--stage audio" in capsys.readouterr().err
        assert not (tmp_path / "f.ckpt").exists()

    def test_seeded_history_identical(self, work, trained, tmp_path):
        assert run("train", *data_args(work), "--stage", "audio", "--checkpoint-out", tmp_path / "a.ckpt") == 0
        assert (tmp_path / "a_history.csv").read_bytes() == (trained / "audio_history.csv").read_bytes()
        assert (tmp_path / "a.ckpt").read_bytes() == (trained / "audio.ckpt").read_bytes()

    def test_grid(self, work, trained, tmp_path, capsys):
        code = run("--set", "fusion.grid=0,0.6", "train", *data_args(work), "--stage", "fusion",
                   "--audio-checkpoint", trained / "audio.ckpt", "--checkpoint-out", tmp_path / "g.ckpt", cfg=FAST)
        assert code == 0
        assert "selected alpha=" in capsys.readouterr().out
        assert (tmp_path / "g_grid.cfg").is_file()


class TestEvaluate:
    def test_classification_report(self, work, trained, tmp_path):
        out = tmp_path / "rep"
        code = run("evaluate", *data_args(work), "--checkpoints", trained / "audio.ckpt", trained / "fusion.ckpt",
                   "--report-out", out, "--svg")
        assert code == 0
        rep = read_report_csv(out / "metrics.csv")
        for key in ("precision", "accuracy", "auc"):
            assert key in rep
        assert (out / "roc.csv").is_file() and (out / "roc.svg").is_file()

    def test_video_mode_needs_checkpoint(self, work, trained, tmp_path):
        assert run("evaluate", *data_args(work), "--mode", "video", "--checkpoints", trained / "audio.ckpt", "--report-out", tmp_path) == 2

    def test_deterministic(self, work, trained, tmp_path):
        for d in ("a", "b"):
            assert run("evaluate", *data_args(work), "--checkpoints", trained / "audio.ckpt", trained / "fusion.ckpt",
                       "--report-out", tmp_path / d) == 0
        for f in ("metrics.csv", "recordings.csv", "roc.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


class TestRegressionRun:
    def test_regression_report(self, tmp_path):
        cfg = FAST + ["--set", "synth.task=regression"]
        assert run("synth", "--out", tmp_path / "c", cfg=cfg) == 0
        assert run("preprocess", "--manifest", tmp_path / "c/manifest.jsonl", "--out", tmp_path / "p", cfg=cfg) == 0
        args = ["--manifest", tmp_path / "c/manifest.jsonl", "--data", tmp_path / "p"]
        assert run("train", *args, "--stage", "audio", "--checkpoint-out", tmp_path / "a.ckpt", cfg=cfg) == 0
        assert run("evaluate", *args, "--mode", "audio", "--checkpoints", tmp_path / "a.ckpt", "--report-out", tmp_path / "r", cfg=cfg) == 0
        rep = read_report_csv(tmp_path / "r/metrics.csv")
        assert "mae" in rep and "rmse" in rep
        assert sum(int(v) for k, v in rep.items() if k.startswith("level_")) == int(rep["n"])


class TestReport:
    @pytest.fixture
    def reports(self, work, trained, tmp_path):
        paths = []
        for mode, cks in (("fusion", ["audio", "fusion"]), ("audio", ["audio"]), ("video", ["video"])):
            out = tmp_path / mode
            assert run("evaluate", *data_args(work), "--mode", mode, "--checkpoints",
                       *[trained / f"{c}.ckpt" for c in cks], "--report-out", out) == 0
            paths.append(out)
        return paths

    def test_ablation_table(self, reports, trained, tmp_path, capsys):
        capsys.readouterr()
        assert run("report", "--report", *reports, "--history", trained / "fusion_history.csv", "--out", tmp_path / "o") == 0
        text = capsys.readouterr().out
        rows = [line.split()[0] for line in text.splitlines()[2:5]]
        assert rows == ["audio-only", "video-only", "fusion"]
        assert (tmp_path / "o/loss_curves.svg").is_file()

    def test_stable_ordering(self, reports, tmp_path, capsys):
        capsys.readouterr()
        assert run("report", "--report", *reports) == 0
        first = capsys.readouterr().out
        assert run("report", "--report", *reports[::-1]) == 0
        assert capsys.readouterr().out == first

    def test_empty_history(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text("")
        assert run("report", "--history", p) != 0

    def test_malformed_csv_line(self, trained, tmp_path, capsys):
        p = tmp_path / "h.csv"
        rows = (trained / "audio_history.csv").read_text().splitlines()
        rows[3] = "oops,val,,,,,"
        p.write_text("\n".join(rows) + "\n")
        assert run("report", "--history", p) != 0
        assert ":4:" in capsys.readouterr().err

    def test_nothing_to_report(self):
        assert run("report") == 2


class TestGlobalFlags:
    def test_unknown_key(self, tmp_path):
        assert run("--set", "video.depth=3", "synth", "--out", tmp_path) == 2

    def test_bad_threads(self, tmp_path):
        assert main(["--threads", "0", "synth", "--out", str(tmp_path)]) == 2

    def test_seed_flag(self, tmp_path):
        assert run("--seed", "4", "synth", "--out", tmp_path / "a") == 0
        assert run("synth", "--out", tmp_path / "b") == 0
        assert (tmp_path / "a/s0000/audio.wav").read_bytes() != (tmp_path / "b/s0000/audio.wav").read_bytes()
