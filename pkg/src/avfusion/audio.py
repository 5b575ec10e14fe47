"""Audio front-end: WAV I/O, STFT, spectral-gate denoising, 2 s segmentation, log-mel."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

SAMPLE_RATE = 16000
N_FFT = 512
HOP = 256
GATE_N_STD = 1.5
LOG_FLOOR = 1e-10


class AudioError(ValueError):
    pass


class WavHeaderError(AudioError):
    """The file is not a well-formed RIFF/WAVE container."""


class UnsupportedEncodingError(AudioError):
    """The WAV is well formed but not 16-bit PCM mono."""


class ClipTooShortError(AudioError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise AudioError("audio clip must be a non-empty 1-d array")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class Spectrogram:
    magnitudes: np.ndarray  # (n_fft // 2 + 1, frames)
    phase: np.ndarray
    n_fft: int
    hop: int
    window: str = "hann"

    @property
    def complex(self) -> np.ndarray:
        return self.magnitudes * np.exp(1j * self.phase)


@dataclass
class NoiseStats:
    """Per-frequency magnitude statistics used to set the gate threshold."""

    mean: np.ndarray
    std: np.ndarray


# -- WAV I/O ----------------------------------------------------------------
def load_wav(path: Union[str, Path], target_rate: int = SAMPLE_RATE) -> AudioClip:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such audio file: {path}")
    with open(path, "rb") as fh:
        head = fh.read(12)
    if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
        raise WavHeaderError(f"{path}: missing RIFF/WAVE header")
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, rate, nframes = wf.getnchannels(), wf.getsampwidth(), wf.getframerate(), wf.getnframes()
            if channels != 1 or width != 2:
                raise UnsupportedEncodingError(f"{path}: need 16-bit mono PCM, got {channels} ch x {8 * width} bit")
            raw = wf.readframes(nframes)
    except wave.Error as exc:
        if "unknown format" in str(exc):
            raise UnsupportedEncodingError(f"{path}: {exc}") from None
        raise WavHeaderError(f"{path}: {exc}") from None
    except EOFError:
        raise WavHeaderError(f"{path}: truncated header") from None
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.size == 0:
        raise WavHeaderError(f"{path}: no audio frames")
    samples = pcm.astype(np.float64) / 32768.0
    if rate != target_rate:
        samples = resample_linear(samples, rate, target_rate)
    return AudioClip(samples, target_rate)


def resample_linear(samples: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    n_out = int(round(samples.size * dst_rate / src_rate))
    positions = np.arange(n_out) * (src_rate / dst_rate)
    return np.interp(positions, np.arange(samples.size), samples)


def write_wav(path: Union[str, Path], clip: AudioClip) -> None:
    pcm = np.round(np.clip(clip.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(clip.sample_rate))
        wf.writeframes(pcm.tobytes())


# -- STFT -------------------------------------------------------------------
def hann(n: int) -> np.ndarray:
    """Periodic Hann window (overlap-adds to a constant at hop n/2)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _samples(x) -> np.ndarray:
    return x.samples if isinstance(x, AudioClip) else np.asarray(x, dtype=np.float64)


def stft(clip, n_fft: int = N_FFT, hop: int = HOP) -> Spectrogram:
    x = _samples(clip)
    if x.size < n_fft:
        raise ClipTooShortError(f"clip of {x.size} samples is shorter than one {n_fft}-sample window")
    n_frames = 1 + (x.size - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    spec = np.fft.rfft(x[idx] * hann(n_fft), axis=1).T
    return Spectrogram(np.abs(spec), np.angle(spec), n_fft, hop)


def istft(spec: Union[Spectrogram, np.ndarray], length: Optional[int] = None, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Weighted overlap-add inverse; samples no window covers come back as 0."""
    if isinstance(spec, Spectrogram):
        n_fft, hop, z = spec.n_fft, spec.hop, spec.complex
    else:
        z = spec
    frames = np.fft.irfft(z.T, n=n_fft, axis=1)
    n_frames = frames.shape[0]
    total = n_fft + hop * (n_frames - 1)
    win = hann(n_fft)
    out = np.zeros(total)
    norm = np.zeros(total)
    for f in range(n_frames):
        out[f * hop : f * hop + n_fft] += frames[f] * win
        norm[f * hop : f * hop + n_fft] += win * win
    covered = norm > 1e-10
    out[covered] /= norm[covered]
    out[~covered] = 0.0
    if length is not None:
        out = out[:length] if length <= total else np.pad(out, (0, length - total))
    return out


# -- denoising ----------------------------------------------------------------
def estimate_noise_stats(clip, n_fft: int = N_FFT, hop: int = HOP) -> NoiseStats:
    mag = stft(clip, n_fft, hop).magnitudes
    return NoiseStats(mag.mean(axis=1), mag.std(axis=1))


def _box3(mask: np.ndarray) -> np.ndarray:
    """3x3 mean filter with edge replication."""
    p = np.pad(mask, 1, mode="edge")
    acc = np.zeros_like(mask, dtype=np.float64)
    for di in range(3):
        for dj in range(3):
            acc += p[di : di + mask.shape[0], dj : dj + mask.shape[1]]
    return acc / 9.0


def spectral_gate_denoise(
    clip: AudioClip,
    noise_stats: Optional[NoiseStats] = None,
    n_std: float = GATE_N_STD,
    prop_decrease: float = 1.0,
    threshold=None,
    n_fft: int = N_FFT,
    hop: int = HOP,
) -> AudioClip:
    """Stationary spectral gate.

    Bins whose magnitude falls below ``mean + n_std * std`` for their
    frequency are attenuated by ``prop_decrease``. Statistics come from
    ``noise_stats`` or, when absent, from the clip itself. ``threshold``
    overrides the statistic (scalar or per-frequency array).
    """
    x = clip.samples
    if x.size < n_fft:
        raise ClipTooShortError(f"clip of {x.size} samples is shorter than one {n_fft}-sample window")
    # pad so every original sample sits under two analysis windows
    left = n_fft // 2
    right = left + (-(x.size + 2 * left - n_fft)) % hop
    padded = np.pad(x, (left, right))
    spec = stft(padded, n_fft, hop)
    if threshold is None:
        stats = noise_stats if noise_stats is not None else estimate_noise_stats(clip, n_fft, hop)
        threshold = stats.mean + n_std * stats.std
    thr = np.broadcast_to(np.asarray(threshold, dtype=np.float64), (spec.magnitudes.shape[0],))
    keep = (spec.magnitudes >= thr[:, None]).astype(np.float64)
    smooth = _box3(keep)
    gain = 1.0 - prop_decrease * (1.0 - smooth)
    out = istft(Spectrogram(spec.magnitudes * gain, spec.phase, n_fft, hop), length=padded.size)
    return AudioClip(out[left : left + x.size], clip.sample_rate)


# -- segmentation and features ----------------------------------------------
def segment_audio(clip: AudioClip, duration: float = 2.0) -> list[AudioClip]:
    """Consecutive non-overlapping windows; a short remainder is dropped."""
    n = int(round(duration * clip.sample_rate))
    count = clip.samples.size // n
    return [AudioClip(clip.samples[i * n : (i + 1) * n].copy(), clip.sample_rate) for i in range(count)]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE, fmin: float = 0.0, fmax: float = 8000.0) -> np.ndarray:
    """Triangular HTK-mel filters, shape (n_mels, n_fft // 2 + 1)."""
    n_bins = n_fft // 2 + 1
    if n_mels > n_bins:
        raise ValueError(f"n_mels={n_mels} exceeds the {n_bins} frequency bins")
    freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def log_mel(spec: Spectrogram, n_mels: int = 64, sample_rate: int = SAMPLE_RATE, normalize: bool = True) -> np.ndarray:
    """Log-mel power features of shape (1, n_mels, frames)."""
    fb = mel_filterbank(n_mels, spec.n_fft, sample_rate)
    feats = np.log(fb @ (spec.magnitudes**2) + LOG_FLOOR)
    if normalize:
        feats = feats - feats.mean()
        std = feats.std()
        if std > 0:
            feats = feats / std
    return feats[None]


def clip_features(clip: AudioClip, n_mels: int = 64) -> np.ndarray:
    return log_mel(stft(clip), n_mels, clip.sample_rate)


def preprocess_audio(clip: AudioClip, duration: float = 2.0, n_mels: int = 64, denoise: bool = True) -> np.ndarray:
    """Denoise, segment and featurize; returns (segments, 1, n_mels, frames)."""
    if denoise:
        clip = spectral_gate_denoise(clip)
    segments = segment_audio(clip, duration)
    if not segments:
        raise ClipTooShortError(f"{clip.duration:.3f} s of audio yields no {duration} s segment")
    return np.stack([clip_features(s, n_mels) for s in segments])


def spectrogram_image(spec: Spectrogram) -> np.ndarray:
    """8-bit log-magnitude image, low frequencies at the bottom."""
    db = 20.0 * np.log10(spec.magnitudes + 1e-8)
    lo, hi = db.max() - 80.0, db.max()
    img = np.clip((db - lo) / max(hi - lo, 1e-12), 0.0, 1.0)
    return np.round(img[::-1] * 255.0).astype(np.uint8)
