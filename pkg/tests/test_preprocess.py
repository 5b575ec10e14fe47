import numpy as np
import pytest

from _helpers import make_corpus
from avfusion.checkpoint import load_tensors
from avfusion.datagen import SynthConfig, generate_dataset, split_dataset
from avfusion.preprocess import (
    PreprocessConfig,
    frame_segments,
    infer_task,
    load_corpus,
    normalized_target,
    preprocess_corpus,
    processed_path,
)


class TestPreprocess:
    def test_corpus_shapes_and_targets(self, tmp_path):
        manifest, corpus = make_corpus(tmp_path, n=10, seed=2)
        assert corpus.task == "classification"
        assert sum(len(corpus.split(s)) for s in ("train", "val", "test")) == 10
        s = corpus.split("train")[0]
        assert s.audio.shape == (1, 1, 64, 124)
        assert s.video.shape == (8, 3, 32, 32)
        assert s.target == s.label

    def test_spectrograms_and_determinism(self, tmp_path):
        m = split_dataset(generate_dataset(SynthConfig(n_samples=10, seed=3), tmp_path / "c"))
        assert preprocess_corpus(m, tmp_path / "p1", emit_spectrograms=True) == []
        assert preprocess_corpus(m, tmp_path / "p2") == []
        assert (tmp_path / "p1" / "s0000_spectrogram.png").is_file()
        for r in m.records:
            assert processed_path(tmp_path / "p1", r.id).read_bytes() == processed_path(tmp_path / "p2", r.id).read_bytes()

    def test_failures_are_collected(self, tmp_path):
        m = split_dataset(generate_dataset(SynthConfig(n_samples=10, seed=3), tmp_path / "c"))
        (tmp_path / "c" / "s0004" / "audio.wav").write_bytes(b"junk")
        failures = preprocess_corpus(m, tmp_path / "p")
        assert [f.sample_id for f in failures] == ["s0004"]
        assert not processed_path(tmp_path / "p", "s0004").exists()
        assert processed_path(tmp_path / "p", "s0005").exists()

    def test_missing_processed(self, tmp_path):
        m = split_dataset(generate_dataset(SynthConfig(n_samples=10), tmp_path / "c"))
        with pytest.raises(FileNotFoundError, match="preprocess"):
            load_corpus(m, tmp_path / "nothing")

    def test_aligned_eyes_level(self, tmp_path):
        m = split_dataset(generate_dataset(SynthConfig(n_samples=10, noise_level=0.0), tmp_path / "c"))
        preprocess_corpus(m, tmp_path / "p")
        tensors, _ = load_tensors(processed_path(tmp_path / "p", "s0000"))
        lum = tensors["video"][0].mean(axis=0)
        # eyes land at (16 +- 0.55 * 32/3, 32/3) after alignment
        y = int(round(32 / 3))
        for x in (int(round(16 - 0.55 * 32 / 3)), int(round(16 + 0.55 * 32 / 3))):
            assert lum[y, x] < lum[y + 5, x]

    def test_regression_targets(self):
        assert normalized_target(31.5, "regression") == 0.5
        assert normalized_target(1.0, "classification") == 1.0

    def test_infer_task(self, tmp_path):
        m = generate_dataset(SynthConfig(n_samples=10, task="regression"), tmp_path / "c")
        assert infer_task(m) == "regression"

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PreprocessConfig(out_size=4)
        with pytest.raises(ValueError):
            PreprocessConfig(frame_rate=0)

    def test_frame_segments(self):
        np.testing.assert_array_equal(frame_segments(10, 2, 4.0, 2.0), [0] * 8 + [1, 1])
        np.testing.assert_array_equal(frame_segments(12, 1, 4.0, 2.0), [0] * 12)
