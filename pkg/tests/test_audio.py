import wave

import numpy as np
import pytest

from avfusion.audio import (
    AudioClip,
    ClipTooShortError,
    UnsupportedEncodingError,
    WavHeaderError,
    estimate_noise_stats,
    hann,
    istft,
    load_wav,
    log_mel,
    mel_filterbank,
    preprocess_audio,
    segment_audio,
    spectral_gate_denoise,
    stft,
    write_wav,
)

SR = 16000


def sine(freq, seconds, amp=0.5, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


def raw_wav(path, pcm, rate=SR, channels=1, width=2):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        wf.writeframes(pcm.tobytes())


class TestWav:
    def test_full_scale(self, tmp_path):
        raw_wav(tmp_path / "a.wav", np.array([32767, -32768, 0], dtype="<i2"))
        np.testing.assert_array_equal(load_wav(tmp_path / "a.wav").samples, [32767 / 32768, -1.0, 0.0])

    def test_silent(self, tmp_path):
        raw_wav(tmp_path / "s.wav", np.zeros(800, dtype="<i2"))
        clip = load_wav(tmp_path / "s.wav")
        assert clip.sample_rate == SR and not clip.samples.any()

    def test_8k_doubles_length(self, tmp_path):
        raw_wav(tmp_path / "l.wav", np.arange(400, dtype="<i2"), rate=8000)
        clip = load_wav(tmp_path / "l.wav")
        assert len(clip) == 800
        # linear interpolation of a ramp is the finer ramp
        np.testing.assert_allclose(clip.samples[:799], np.arange(799) / 2 / 32768, atol=1e-12)

    def test_round_trip(self, tmp_path):
        x = sine(440, 0.1)
        write_wav(tmp_path / "r.wav", AudioClip(x))
        np.testing.assert_allclose(load_wav(tmp_path / "r.wav").samples, x, atol=1 / 32768 + 1e-12)

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_wav(tmp_path / "nope.wav")

    def test_bad_header(self, tmp_path):
        (tmp_path / "b.wav").write_bytes(b"NOTAWAVEFILE" + bytes(40))
        with pytest.raises(WavHeaderError):
            load_wav(tmp_path / "b.wav")

    def test_truncated_header(self, tmp_path):
        (tmp_path / "t.wav").write_bytes(b"RIFF\x00\x00\x00\x00WAVEfmt ")
        with pytest.raises(WavHeaderError):
            load_wav(tmp_path / "t.wav")

    def test_stereo_rejected(self, tmp_path):
        raw_wav(tmp_path / "st.wav", np.zeros(20, dtype="<i2"), channels=2)
        with pytest.raises(UnsupportedEncodingError):
            load_wav(tmp_path / "st.wav")

    def test_8bit_rejected(self, tmp_path):
        raw_wav(tmp_path / "b8.wav", np.zeros(20, dtype=np.uint8), width=1)
        with pytest.raises(UnsupportedEncodingError):
            load_wav(tmp_path / "b8.wav")

    def test_errors_are_distinct(self):
        assert not issubclass(WavHeaderError, UnsupportedEncodingError)
        assert not issubclass(UnsupportedEncodingError, WavHeaderError)


class TestStft:
    def test_peak_bin(self):
        spec = stft(sine(1000, 1.0))
        assert np.all(spec.magnitudes.argmax(axis=0) == 32)

    def test_shape_and_frames(self):
        for n in (512, 513, 767, 768, 32000):
            spec = stft(np.random.default_rng(n).normal(size=n))
            assert spec.magnitudes.shape == (257, 1 + (n - 512) // 256)
            assert np.all(spec.magnitudes >= 0)

    def test_zeros(self):
        assert not stft(np.zeros(2048)).magnitudes.any()

    def test_matches_direct_dft(self):
        x = np.random.default_rng(1).normal(size=1024)
        spec = stft(x)
        n = np.arange(512)
        k = np.arange(257)[:, None]
        basis = np.exp(-2j * np.pi * k * n / 512)
        for f in range(spec.magnitudes.shape[1]):
            direct = basis @ (x[f * 256 : f * 256 + 512] * hann(512))
            np.testing.assert_allclose(spec.complex[:, f], direct, atol=1e-9)

    def test_round_trip_interior(self):
        x = np.random.default_rng(2).uniform(-1, 1, size=5000)
        y = istft(stft(x), length=x.size)
        # samples covered by two windows are reconstructed exactly
        assert np.max(np.abs(y[256:4864] - x[256:4864])) < 1e-6

    def test_too_short(self):
        with pytest.raises(ClipTooShortError):
            stft(np.zeros(511))


class TestDenoise:
    def test_all_pass_identity(self):
        x = np.random.default_rng(3).uniform(-0.5, 0.5, size=8000)
        y = spectral_gate_denoise(AudioClip(x), threshold=-np.inf)
        assert y.samples.size == x.size
        assert np.max(np.abs(y.samples - x)) < 1e-6

    def test_white_noise_rms_drops(self):
        x = np.random.default_rng(4).normal(scale=0.1, size=16000)
        y = spectral_gate_denoise(AudioClip(x))
        assert np.sqrt(np.mean(y.samples**2)) < np.sqrt(np.mean(x**2))

    @pytest.mark.parametrize("seed", range(5))
    def test_energy_never_increases(self, seed):
        rng = np.random.default_rng(seed)
        x = sine(300 + 100 * seed, 1.0, amp=0.3) + rng.normal(scale=0.05, size=SR)
        y = spectral_gate_denoise(AudioClip(x))
        assert np.sum(y.samples**2) <= np.sum(x**2)

    def test_snr_improves_with_noise_reference(self):
        rng = np.random.default_rng(5)
        noise = rng.normal(scale=0.02, size=2 * SR)
        x = sine(1000, 2.0, amp=0.3) + noise
        stats = estimate_noise_stats(rng.normal(scale=0.02, size=2 * SR))

        def snr(sig):
            mag = stft(sig).magnitudes ** 2
            band = mag[30:35].sum()
            return band / (mag.sum() - band)

        y = spectral_gate_denoise(AudioClip(x), noise_stats=stats)
        assert snr(y.samples) > snr(x)

    def test_prop_decrease_zero_is_identity(self):
        x = np.random.default_rng(6).normal(scale=0.1, size=4000)
        y = spectral_gate_denoise(AudioClip(x), prop_decrease=0.0)
        assert np.max(np.abs(y.samples - x)) < 1e-6

    def test_too_short(self):
        with pytest.raises(ClipTooShortError):
            spectral_gate_denoise(AudioClip(np.zeros(100)))


class TestSegment:
    @pytest.mark.parametrize("seconds,count", [(10, 5), (9, 4), (1, 0), (2, 1), (3.99, 1)])
    def test_counts(self, seconds, count):
        segs = segment_audio(AudioClip(np.ones(int(seconds * SR))))
        assert len(segs) == count
        assert all(len(s) == 32000 for s in segs)

    def test_disjoint_and_ordered(self):
        x = np.arange(5 * SR, dtype=np.float64) / (5 * SR)
        segs = segment_audio(AudioClip(x))
        np.testing.assert_array_equal(np.concatenate([s.samples for s in segs]), x[: 2 * 32000])


class TestMel:
    def test_filterbank_shape_and_support(self):
        fb = mel_filterbank(64)
        assert fb.shape == (64, 257)
        assert np.all(fb >= 0) and np.all(fb <= 1)
        assert np.all(fb.max(axis=1) > 0)

    def test_too_many_mels(self):
        with pytest.raises(ValueError):
            mel_filterbank(300)

    def test_shape_for_two_seconds(self):
        feats = log_mel(stft(sine(500, 2.0)))
        assert feats.shape == (1, 64, 124)
        assert abs(feats.mean()) < 1e-6 and abs(feats.std() - 1) < 1e-6

    def test_zero_input_is_log_floor(self):
        raw = log_mel(stft(np.zeros(32000)), normalize=False)
        np.testing.assert_allclose(raw, np.log(1e-10))
        # a constant map stays constant (and finite) after normalization
        norm = log_mel(stft(np.zeros(32000)))
        assert np.all(norm == 0.0)

    def test_pipeline_shape_and_determinism(self):
        x = sine(220, 5.3) + np.random.default_rng(7).normal(scale=0.01, size=int(5.3 * SR))
        a = preprocess_audio(AudioClip(x))
        b = preprocess_audio(AudioClip(x.copy()))
        assert a.shape == (2, 1, 64, 124)
        assert a.tobytes() == b.tobytes()

    def test_pipeline_too_short(self):
        with pytest.raises(ClipTooShortError):
            preprocess_audio(AudioClip(sine(220, 1.5)))
