"""Seeded synthetic audio-video corpus, JSONL manifests, and the 6:1:3 split.

Each sample is a short "recording": speech-like audio (syllabic envelope,
gliding pitch, one formant-like tone whose frequency shifts with the label)
and a cartoon face whose mouth and eyebrow motion amplitude grows with the
label. With both strengths at zero the two modalities carry no label
information at all.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .audio import AudioClip, write_wav
from .seeding import rng_for
from .video import write_image, write_landmarks

SPLITS = ("train", "val", "test")
TASKS = ("classification", "regression")
BDI_MAX = 63.0
MANIFEST_NAME = "manifest.jsonl"
RECORD_FIELDS = ("id", "audio", "frames", "landmarks", "label", "split")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 188
    task: str = "classification"
    audio_shift_hz: float = 400.0
    motion_px: float = 2.0
    noise_level: float = 0.03
    frames: int = 8
    height: int = 32
    width: int = 32
    frame_rate: float = 4.0
    sample_rate: int = 16000
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.n_samples < 10:
            raise ValueError(f"n_samples must be >= 10, got {self.n_samples}")
        if self.audio_shift_hz < 0 or self.motion_px < 0 or self.noise_level < 0:
            raise ValueError("signal strengths and noise level must be non-negative")

    @property
    def duration(self) -> float:
        return self.frames / self.frame_rate


@dataclass
class SampleRecord:
    id: str
    audio: str
    frames: str
    landmarks: str
    label: float
    split: str = "train"

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k) for k in RECORD_FIELDS}, separators=(", ", ": "))


@dataclass
class DatasetManifest:
    records: list[SampleRecord] = field(default_factory=list)
    root: Path = Path(".")

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ManifestError("sample ids must be unique")
        for r in self.records:
            if r.split not in SPLITS:
                raise ManifestError(f"{r.id}: unknown split {r.split!r}")

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other) -> bool:
        return isinstance(other, DatasetManifest) and self.records == other.records

    def split(self, name: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == name]

    def path(self, rel: str) -> Path:
        return self.root / rel


# -- label-conditioned synthesis ------------------------------------------------
def label_strength(label: float, task: str) -> float:
    return float(label) if task == "classification" else float(label) / BDI_MAX


def synth_audio(cfg: SynthConfig, strength: float, rng: np.random.Generator) -> np.ndarray:
    sr = cfg.sample_rate
    n = int(round(cfg.duration * sr))
    t = np.arange(n) / sr

    # syllables: smooth bursts separated by short pauses
    env = np.zeros(n)
    pos = rng.uniform(0.0, 0.15)
    while pos < cfg.duration:
        length = rng.uniform(0.15, 0.35)
        a, b = int(pos * sr), min(n, int((pos + length) * sr))
        if b > a:
            env[a:b] = np.sin(np.pi * np.arange(b - a) / (b - a)) ** 2
        pos += length + rng.uniform(0.05, 0.2)

    f0 = rng.uniform(110.0, 220.0)
    glide = 1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(1.5, 3.5) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * f0 * np.cumsum(glide) / sr
    voiced = sum(np.sin(k * phase) / k for k in range(1, 7))
    formant_hz = 1200.0 + cfg.audio_shift_hz * strength
    formant = 0.8 * np.sin(formant_hz / f0 * phase + rng.uniform(0, 2 * np.pi))
    signal = env * (0.5 * voiced + formant)
    signal = 0.5 * signal / max(np.abs(signal).max(), 1e-9)
    return np.clip(signal + cfg.noise_level * rng.normal(size=n), -1.0, 1.0)


def _soft(d: np.ndarray) -> np.ndarray:
    """Coverage from a signed distance (negative inside), ~1 px ramp."""
    return np.clip(0.5 - d, 0.0, 1.0)


def synth_video(cfg: SynthConfig, strength: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Frames (T, 3, H, W) in [0, 1] and landmarks (T, 3, 2)."""
    h, w, n_frames = cfg.height, cfg.width, cfg.frames
    unit = min(h, w) / 3.0 * rng.uniform(0.85, 1.0)  # eye-to-mouth distance in px
    centre = np.array([w / 2.0, h / 3.0]) + rng.uniform(-1.5, 1.5, size=2)
    angle = np.deg2rad(rng.uniform(-15.0, 15.0))
    background = rng.uniform(0.1, 0.4, size=3)
    skin = np.array([rng.uniform(0.6, 0.9), rng.uniform(0.45, 0.7), rng.uniform(0.35, 0.55)])
    feature = rng.uniform(0.0, 0.15, size=3)
    amp = 0.3 + cfg.motion_px * strength  # px
    freq = rng.uniform(0.6, 1.4)
    ph = rng.uniform(0.0, 2 * np.pi)

    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    frames = np.empty((n_frames, 3, h, w))
    landmarks = np.empty((n_frames, 3, 2))
    for f in range(n_frames):
        t = f / cfg.frame_rate
        a = angle + np.deg2rad(rng.normal(0.0, 0.7))
        c0 = centre + rng.normal(0.0, 0.25, size=2)
        ca, sa = np.cos(a), np.sin(a)
        # face coordinates in px, origin at the eye midpoint, y toward the mouth
        dx, dy = gx - c0[0], gy - c0[1]
        u = ca * dx + sa * dy
        v = -sa * dx + ca * dy
        open_px = 0.5 + amp * abs(np.sin(2 * np.pi * freq * t + ph))
        raise_px = 0.5 * amp * abs(np.sin(2 * np.pi * freq * t + ph + 1.0))

        head = _soft((np.hypot(u / 1.1, (v - 0.4 * unit) / 1.45) - unit) * 1.2)
        eye_r = 0.16 * unit
        eyes = np.maximum(_soft(np.hypot(u + 0.55 * unit, v) - eye_r), _soft(np.hypot(u - 0.55 * unit, v) - eye_r))
        mouth = _soft(np.maximum(np.abs(u) - 0.45 * unit, np.abs(v - unit) - open_px))
        brow_y = -0.35 * unit - raise_px
        brows = _soft(np.maximum(np.abs(np.abs(u) - 0.55 * unit) - 0.25 * unit, np.abs(v - brow_y) - 0.5))
        ink = np.maximum(np.maximum(eyes, mouth), brows) * head

        img = background[:, None, None] * (1 - head) + skin[:, None, None] * head
        img = img * (1 - ink) + feature[:, None, None] * ink
        frames[f] = np.clip(img + cfg.noise_level * rng.normal(size=img.shape), 0.0, 1.0)

        to_img = lambda p: c0 + np.array([ca * p[0] - sa * p[1], sa * p[0] + ca * p[1]])  # noqa: E731
        landmarks[f] = [to_img((-0.55 * unit, 0.0)), to_img((0.55 * unit, 0.0)), to_img((0.0, unit))]
    return frames, landmarks


def draw_labels(cfg: SynthConfig) -> np.ndarray:
    rng = rng_for(cfg.seed, "labels")
    if cfg.task == "classification":
        return rng.permutation(np.arange(cfg.n_samples) % 2).astype(np.float64)
    return rng.uniform(0.0, BDI_MAX, size=cfg.n_samples)


def generate_sample(cfg: SynthConfig, index: int, label: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(audio samples, frames, landmarks) for one sample; pure in (cfg, index, label)."""
    strength = label_strength(label, cfg.task)
    audio = synth_audio(cfg, strength, rng_for(cfg.seed, "audio", index))
    frames, landmarks = synth_video(cfg, strength, rng_for(cfg.seed, "video", index))
    return audio, frames, landmarks


def sample_id(index: int) -> str:
    return f"s{index:04d}"


def generate_dataset(cfg: SynthConfig, out_dir: Union[str, Path]) -> DatasetManifest:
    """Write the corpus under ``out_dir``; records come back unsplit (all 'train')."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out_dir} is not writable: {exc}") from None
    labels = draw_labels(cfg)
    records = []
    for i, label in enumerate(labels):
        sid = sample_id(i)
        audio, frames, landmarks = generate_sample(cfg, i, float(label))
        sdir = out_dir / sid
        (sdir / "frames").mkdir(parents=True, exist_ok=True)
        write_wav(sdir / "audio.wav", AudioClip(audio, cfg.sample_rate))
        for f, frame in enumerate(frames):
            write_image(sdir / "frames" / f"frame_{f:06d}.png", frame)
        write_landmarks(sdir / "landmarks.txt", landmarks)
        records.append(SampleRecord(sid, f"{sid}/audio.wav", f"{sid}/frames", f"{sid}/landmarks.txt", float(label)))
    return DatasetManifest(records, out_dir)


# -- splitting ------------------------------------------------------------------
def split_counts(n: int, ratio: Sequence[int] = (6, 1, 3)) -> tuple[int, int, int]:
    """(train, val, test) with val and test rounded half-up and train the rest."""
    total = sum(ratio)
    val = (2 * n * ratio[1] + total) // (2 * total)
    test = (2 * n * ratio[2] + total) // (2 * total)
    train = n - val - test
    if min(train, val, test) < 1:
        raise ValueError(f"{n} samples cannot fill every split at ratio {tuple(ratio)}")
    return train, val, test


def _apportion(total: int, sizes: Sequence[int]) -> list[int]:
    """Largest-remainder allocation of ``total`` proportional to ``sizes``."""
    n = sum(sizes)
    exact = [total * s / n for s in sizes]
    base = [int(np.floor(e)) for e in exact]
    order = sorted(range(len(sizes)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[: total - sum(base)]:
        base[i] += 1
    return base


def split_dataset(manifest: DatasetManifest, ratio: Sequence[int] = (6, 1, 3), seed: int = 0, stratify: Optional[bool] = None) -> DatasetManifest:
    """Seeded shuffle into train/val/test; label-stratified for binary labels."""
    n = len(manifest)
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    _, n_val, n_test = split_counts(n, ratio)
    labels = [r.label for r in manifest.records]
    if stratify is None:
        stratify = set(labels) <= {0.0, 1.0}
    rng = rng_for(seed, "split")
    groups = sorted(set(labels)) if stratify else [None]
    members = [[i for i, lab in enumerate(labels) if g is None or lab == g] for g in groups]
    val_q = _apportion(n_val, [len(m) for m in members])
    test_q = _apportion(n_test, [len(m) for m in members])
    assignment = ["train"] * n
    for idx, vq, tq in zip(members, val_q, test_q):
        order = [idx[j] for j in rng.permutation(len(idx))]
        for j in order[:vq]:
            assignment[j] = "val"
        for j in order[vq : vq + tq]:
            assignment[j] = "test"
    records = [SampleRecord(**{**asdict(r), "split": s}) for r, s in zip(manifest.records, assignment)]
    return DatasetManifest(records, manifest.root)


# -- manifest I/O ---------------------------------------------------------------
def write_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(r.to_json() + "\n" for r in manifest.records))
    os.replace(tmp, path)


def _parse_record(obj, lineno: int, path) -> SampleRecord:
    if not isinstance(obj, dict):
        raise ManifestError(f"{path}:{lineno}: record is not a JSON object")
    for key in RECORD_FIELDS:
        if key not in obj:
            raise ManifestError(f"{path}:{lineno}: missing field '{key}'")
    extra = set(obj) - set(RECORD_FIELDS)
    if extra:
        raise ManifestError(f"{path}:{lineno}: unknown field(s) {sorted(extra)}")
    for key in ("id", "audio", "frames", "landmarks", "split"):
        if not isinstance(obj[key], str):
            raise ManifestError(f"{path}:{lineno}: field '{key}' must be a string")
    if not isinstance(obj["label"], (int, float)) or isinstance(obj["label"], bool):
        raise ManifestError(f"{path}:{lineno}: field 'label' must be a number")
    if obj["split"] not in SPLITS:
        raise ManifestError(f"{path}:{lineno}: field 'split' has unknown value {obj['split']!r}")
    return SampleRecord(obj["id"], obj["audio"], obj["frames"], obj["landmarks"], float(obj["label"]), obj["split"])


def read_manifest(path: Union[str, Path]) -> DatasetManifest:
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
        records.append(_parse_record(obj, lineno, path))
    if not records:
        raise ManifestError(f"{path}: manifest holds no records")
    try:
        return DatasetManifest(records, path.parent)
    except ManifestError as exc:
        raise ManifestError(f"{path}: {exc}") from None


def check_files(manifest: DatasetManifest) -> list[str]:
    """Referenced paths that do not exist."""
    missing = []
    for r in manifest.records:
        for rel in (r.audio, r.frames, r.landmarks):
            if not manifest.path(rel).exists():
                missing.append(f"{r.id}: {rel}")
    return missing


def summarize(manifest: DatasetManifest) -> dict[str, dict[str, int]]:
    out: dict[str, dict[str, int]] = {}
    for s in SPLITS:
        recs = manifest.split(s)
        out[s] = {"n": len(recs), "positives": sum(1 for r in recs if r.label >= 0.5) if recs else 0}
    return out


def iter_labels(records: Iterable[SampleRecord]) -> np.ndarray:
    return np.array([r.label for r in records], dtype=np.float64)
