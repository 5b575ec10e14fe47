"""Corpus preprocessing and the in-memory view the trainers consume.

Each sample becomes one container file ``<id>.avt`` holding ``audio``
(segments, 1, mels, frames) log-mel features and ``video`` (T, 3, S, S)
aligned frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import audio as A
from . import video as V
from .checkpoint import load_tensors, save_tensors
from .datagen import BDI_MAX, DatasetManifest, SampleRecord

PROCESSED_SUFFIX = ".avt"


@dataclass(frozen=True)
class PreprocessConfig:
    out_size: int = 32
    n_mels: int = 64
    segment_seconds: float = 2.0
    denoise: bool = True
    frame_rate: float = 4.0

    def __post_init__(self):
        if self.out_size < 8:
            raise ValueError(f"out_size must be >= 8, got {self.out_size}")
        if self.segment_seconds <= 0 or self.frame_rate <= 0:
            raise ValueError("segment length and frame rate must be positive")


class SampleError(RuntimeError):
    def __init__(self, sample_id: str, reason: str):
        super().__init__(f"{sample_id}: {reason}")
        self.sample_id = sample_id
        self.reason = reason


def preprocess_sample(manifest: DatasetManifest, record: SampleRecord, cfg: PreprocessConfig) -> dict[str, np.ndarray]:
    try:
        clip = A.load_wav(manifest.path(record.audio))
        feats = A.preprocess_audio(clip, cfg.segment_seconds, cfg.n_mels, cfg.denoise)
        seq = V.load_frames(manifest.path(record.frames), manifest.path(record.landmarks), cfg.frame_rate)
        frames = V.align_sequence(seq, cfg.out_size)
    except (OSError, ValueError) as exc:
        raise SampleError(record.id, str(exc)) from exc
    return {"audio": feats, "video": frames}


def processed_path(out_dir: Union[str, Path], sample_id: str) -> Path:
    return Path(out_dir) / f"{sample_id}{PROCESSED_SUFFIX}"


def preprocess_corpus(
    manifest: DatasetManifest,
    out_dir: Union[str, Path],
    cfg: PreprocessConfig = PreprocessConfig(),
    emit_spectrograms: bool = False,
) -> list[SampleError]:
    """Process every record; failures are collected rather than raised."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = []
    for record in manifest.records:
        try:
            tensors = preprocess_sample(manifest, record, cfg)
        except SampleError as exc:
            failures.append(exc)
            continue
        save_tensors(processed_path(out_dir, record.id), tensors)
        if emit_spectrograms:
            clip = A.load_wav(manifest.path(record.audio))
            if cfg.denoise:
                clip = A.spectral_gate_denoise(clip)
            V.write_image(out_dir / f"{record.id}_spectrogram.png", A.spectrogram_image(A.stft(clip)))
    return failures


def infer_task(manifest: DatasetManifest) -> str:
    return "classification" if {r.label for r in manifest.records} <= {0.0, 1.0} else "regression"


def normalized_target(label: float, task: str) -> float:
    """Model-space target: class index as is, BDI scores divided by 63."""
    return float(label) if task == "classification" else float(label) / BDI_MAX


@dataclass
class Sample:
    id: str
    label: float  # raw label
    target: float  # model-space label
    audio: np.ndarray  # (S, 1, mels, frames)
    video: np.ndarray  # (T, 3, H, W)


@dataclass
class Corpus:
    task: str
    frame_rate: float
    segment_seconds: float
    splits: dict[str, list[Sample]] = field(default_factory=dict)

    def split(self, name: str) -> list[Sample]:
        return self.splits.get(name, [])


def load_corpus(manifest: DatasetManifest, processed_dir: Union[str, Path], task: Optional[str] = None, cfg: PreprocessConfig = PreprocessConfig()) -> Corpus:
    task = task or infer_task(manifest)
    corpus = Corpus(task, cfg.frame_rate, cfg.segment_seconds, {"train": [], "val": [], "test": []})
    for r in manifest.records:
        path = processed_path(processed_dir, r.id)
        if not path.exists():
            raise FileNotFoundError(f"{r.id}: no preprocessed tensors at {path}; run preprocess first")
        tensors, _ = load_tensors(path)
        corpus.splits[r.split].append(Sample(r.id, r.label, normalized_target(r.label, task), tensors["audio"], tensors["video"]))
    return corpus


def frame_segments(n_frames: int, n_segments: int, frame_rate: float, segment_seconds: float) -> np.ndarray:
    """Index of the audio segment each video frame falls in (clamped to the last)."""
    starts = np.arange(n_frames) / frame_rate
    return np.minimum((starts // segment_seconds).astype(int), n_segments - 1)
