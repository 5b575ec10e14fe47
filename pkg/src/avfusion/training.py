"""MAE losses, the weighted fusion loss, audio pre-training, and video fine-tuning.

The audio network is trained first and frozen. The video network is then
trained on ``alpha * loss_audio + beta * loss_video`` where the audio term is
computed from the frozen model and therefore only shifts the loss value.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from . import evaluation as E
from .models import AudioNetConfig, ModelConfig, VideoNetConfig, forward, init_params
from .optim import FrozenParamsError, ModelParams, OptimizerState, adam_step
from .preprocess import Corpus, Sample
from .seeding import rng_for
from .tensor import Tensor, as_tensor, mean, tabs
from .video import AugmentConfig, augment, sample_clip

HISTORY_COLUMNS = ("epoch", "split", "loss_s", "loss_v", "loss_b", "mae", "accuracy")


class NonFiniteLossError(FloatingPointError):
    pass


class EmptySplitError(ValueError):
    pass


# -- losses -----------------------------------------------------------------------
@dataclass
class PredictionBatch:
    predictions: Tensor
    labels: np.ndarray

    def __post_init__(self):
        self.predictions = as_tensor(self.predictions)
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if self.predictions.size == 0:
            raise ValueError("prediction batch is empty")
        if self.predictions.size != self.labels.size:
            raise ValueError(f"{self.predictions.size} predictions for {self.labels.size} labels")

    def __len__(self) -> int:
        return self.labels.size


def mae_loss(batch: PredictionBatch) -> Tensor:
    """Mean absolute error; the subgradient at a tie is 0."""
    pred = batch.predictions.reshape(-1)
    return mean(tabs(pred - batch.labels))


@dataclass(frozen=True)
class FusionLossConfig:
    alpha: float = 0.6
    beta: float = 0.4

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"fusion weights must be non-negative, got alpha={self.alpha}, beta={self.beta}")
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise ValueError(f"fusion weights must sum to 1, got {self.alpha} + {self.beta}")

    @classmethod
    def from_alpha(cls, alpha: float) -> "FusionLossConfig":
        alpha = round(float(alpha), 12)
        return cls(alpha, round(1.0 - alpha, 12))


def fusion_loss(l_s, l_v, cfg: FusionLossConfig) -> Tensor:
    return cfg.alpha * as_tensor(l_s) + cfg.beta * as_tensor(l_v)


def _checked(loss: Tensor, where: str) -> Tensor:
    v = float(loss.data)
    if not math.isfinite(v):
        raise NonFiniteLossError(f"non-finite loss ({v}) {where}")
    return loss


# -- schedules --------------------------------------------------------------------
@dataclass(frozen=True)
class StageSchedule:
    epochs: int
    lr: float

    def __post_init__(self):
        if self.epochs < 1 or not self.lr > 0:
            raise ValueError(f"epochs and lr must be positive, got {self.epochs}, {self.lr}")


@dataclass(frozen=True)
class TrainSchedule:
    audio: StageSchedule = StageSchedule(100, 1e-4)
    fusion: StageSchedule = StageSchedule(150, 1e-3)
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")

    @classmethod
    def desk(cls, seed: int = 0, epochs: int = 30) -> "TrainSchedule":
        """Short CI schedule; the audio learning rate is raised to converge in 30 epochs."""
        return cls(StageSchedule(epochs, 1e-3), StageSchedule(epochs, 1e-3), 8, seed)


# -- history ----------------------------------------------------------------------
@dataclass
class HistoryRow:
    epoch: int
    split: str
    loss_s: Optional[float] = None
    loss_v: Optional[float] = None
    loss_b: Optional[float] = None
    mae: Optional[float] = None
    accuracy: Optional[float] = None


@dataclass
class TrainResult:
    params: ModelParams
    history: list[HistoryRow]
    best_epoch: int
    config: FusionLossConfig = field(default_factory=lambda: FusionLossConfig(0.0, 1.0))

    def val_rows(self) -> list[HistoryRow]:
        return [r for r in self.history if r.split == "val"]


def history_csv(rows: Iterable[HistoryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for r in rows:
        w.writerow(["" if getattr(r, c) is None else E.fmt(getattr(r, c)) for c in HISTORY_COLUMNS])
    return buf.getvalue()


def write_history(rows: Iterable[HistoryRow], path: Union[str, Path]) -> None:
    Path(path).write_text(history_csv(rows))


def read_history(path: Union[str, Path]) -> list[HistoryRow]:
    rows = E._read_csv(path, HISTORY_COLUMNS)
    out = []
    for lineno, r in enumerate(rows, 2):
        try:
            vals = {c: (float(r[c]) if r[c] != "" else None) for c in HISTORY_COLUMNS[2:]}
            out.append(HistoryRow(int(r["epoch"]), r["split"], **vals))
        except ValueError:
            raise E.CsvFormatError(f"{path}:{lineno}: non-numeric history value") from None
    if not out:
        raise E.CsvFormatError(f"{path}: history has no rows")
    return out


# -- helpers ----------------------------------------------------------------------
def _split(corpus: Corpus, name: str) -> list[Sample]:
    samples = corpus.split(name)
    if not samples:
        raise EmptySplitError(f"the {name} split is empty")
    return samples


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + size] for i in range(0, n, size)]


def _metrics(task: str, scores: np.ndarray, targets: np.ndarray) -> tuple[float, Optional[float]]:
    """(MAE in model space, accuracy for classification)."""
    mae = float(np.mean(np.abs(scores - targets)))
    acc = E.classification_metrics(scores, targets)[1] if task == "classification" else None
    return mae, acc


def _step(params: ModelParams, loss: Tensor, state: OptimizerState) -> None:
    params.zero_grad()
    loss.backward()
    adam_step(params, params.grads(), state)


# -- audio pre-training -----------------------------------------------------------
def audio_recording_scores(cfg: ModelConfig, params: ModelParams, samples: Sequence[Sample]) -> np.ndarray:
    return np.array([E.aggregate_recording(E.segment_scores(cfg, params, s.audio)) for s in samples])


def pretrain_audio(corpus: Corpus, cfg: AudioNetConfig, schedule: TrainSchedule) -> TrainResult:
    """Train the audio network on per-segment MAE, keep the best validation epoch, freeze it.

    Epoch 0 rows hold the untrained model's losses.
    """
    train, val = _split(corpus, "train"), _split(corpus, "val")
    params = init_params(cfg, int(rng_for(schedule.seed, "audio-init").integers(2**32)))
    state = OptimizerState(lr=schedule.audio.lr)
    y_train = np.array([s.target for s in train])
    y_val = np.array([s.target for s in val])
    history: list[HistoryRow] = []

    def evaluate(epoch: int, train_loss: Optional[float]) -> float:
        if train_loss is None:
            train_loss = float(np.mean(np.abs(audio_recording_scores(cfg, params, train) - y_train)))
        history.append(HistoryRow(epoch, "train", loss_s=train_loss))
        scores = audio_recording_scores(cfg, params, val)
        mae, acc = _metrics(corpus.task, scores, y_val)
        history.append(HistoryRow(epoch, "val", loss_s=mae, mae=mae, accuracy=acc))
        return mae

    best_loss, best_epoch, best_state = evaluate(0, None), 0, params.state()
    for epoch in range(1, schedule.audio.epochs + 1):
        rng = rng_for(schedule.seed, "audio-epoch", epoch)
        total = 0.0
        for idx in _batches(len(train), schedule.batch_size, rng):
            x = np.stack([train[i].audio[rng.integers(len(train[i].audio))] for i in idx])
            pred = forward(cfg, params, x)
            loss = _checked(mae_loss(PredictionBatch(pred, y_train[idx])), f"in audio epoch {epoch}")
            total += float(loss.data) * len(idx)
            _step(params, loss, state)
        val_loss = evaluate(epoch, total / len(train))
        if val_loss < best_loss:
            best_loss, best_epoch, best_state = val_loss, epoch, params.state()
    params.load_state(best_state)
    return TrainResult(params.freeze(), history, best_epoch, FusionLossConfig(1.0, 0.0))


# -- video / fusion training --------------------------------------------------------
@dataclass(frozen=True)
class VideoTrainOptions:
    clip_len: int = 8
    augment: AugmentConfig = field(default_factory=AugmentConfig)


def _seg_table(audio_cfg, audio_params, samples: Sequence[Sample]) -> list[np.ndarray]:
    return [E.segment_scores(audio_cfg, audio_params, s.audio) for s in samples]


def _train_video(
    corpus: Corpus,
    video_cfg: VideoNetConfig,
    fusion_cfg: FusionLossConfig,
    schedule: TrainSchedule,
    options: VideoTrainOptions,
    audio: Optional[tuple[ModelConfig, ModelParams]],
) -> TrainResult:
    train, val = _split(corpus, "train"), _split(corpus, "val")
    proto = E.ProtocolConfig(options.clip_len, corpus.frame_rate, corpus.segment_seconds)
    use_audio = audio is not None
    train_segs = _seg_table(*audio, train) if use_audio else None
    val_segs = _seg_table(*audio, val) if use_audio else None
    y_train = np.array([s.target for s in train])
    y_val = np.array([s.target for s in val])
    # same init seed for every fusion weight so runs are directly comparable
    params = init_params(video_cfg, int(rng_for(schedule.seed, "video-init").integers(2**32)))
    state = OptimizerState(lr=schedule.fusion.lr)
    alpha, beta = fusion_cfg.alpha, fusion_cfg.beta
    history: list[HistoryRow] = []

    def evaluate(epoch: int, train_row: Optional[HistoryRow]) -> float:
        if train_row is not None:
            history.append(train_row)
        rec = [
            E.evaluate_recording(s.video, None, alpha if use_audio else 0.0, beta if use_audio else 1.0, proto, (video_cfg, params), seg_scores=val_segs[i] if use_audio else None)
            for i, s in enumerate(val)
        ]
        v_scores = np.array([r.video for r in rec])
        l_v = float(np.mean(np.abs(v_scores - y_val)))
        if use_audio:
            a_scores = np.array([E.aggregate_recording(seg) for seg in val_segs])
            l_s = float(np.mean(np.abs(a_scores - y_val)))
            fused = np.array([r.fused for r in rec])
        else:
            l_s, fused = None, v_scores
        l_b = l_v if not use_audio else alpha * l_s + beta * l_v
        mae, acc = _metrics(corpus.task, fused, y_val)
        history.append(HistoryRow(epoch, "val", l_s, l_v, l_b, mae, acc))
        return l_b

    best_loss, best_epoch, best_state = evaluate(0, None), 0, params.state()
    for epoch in range(1, schedule.fusion.epochs + 1):
        rng = rng_for(schedule.seed, "video-epoch", epoch)
        sums = np.zeros(3)
        for idx in _batches(len(train), schedule.batch_size, rng):
            clips, a_clip = [], []
            for i in idx:
                clip, start = sample_clip(train[i].video, options.clip_len, rng)
                clips.append(augment(clip, options.augment, rng).transpose(1, 0, 2, 3))
                if use_audio:
                    frames = (start + np.arange(options.clip_len)) % len(train[i].video)
                    a_clip.append(E.clip_audio_score(train_segs[i], frames, proto))
            pred = forward(video_cfg, params, np.stack(clips))
            l_v = _checked(mae_loss(PredictionBatch(pred, y_train[idx])), f"in video epoch {epoch}")
            if use_audio:
                l_s = mae_loss(PredictionBatch(np.array(a_clip), y_train[idx]))
                l_b = _checked(fusion_loss(l_s, l_v, fusion_cfg), f"in fusion epoch {epoch}")
                sums += len(idx) * np.array([float(l_s.data), float(l_v.data), float(l_b.data)])
            else:
                l_b = l_v
                sums += len(idx) * np.array([0.0, float(l_v.data), float(l_v.data)])
            if beta > 0:
                _step(params, l_b, state)
            # beta == 0: no gradient reaches the video network; Adam from zero moments would not move it
        s_mean = [float(v) for v in sums / len(train)]
        row = HistoryRow(epoch, "train", s_mean[0] if use_audio else None, s_mean[1], s_mean[2])
        val_loss = evaluate(epoch, row)
        if val_loss < best_loss:
            best_loss, best_epoch, best_state = val_loss, epoch, params.state()
    params.load_state(best_state)
    return TrainResult(params, history, best_epoch, fusion_cfg if use_audio else FusionLossConfig(0.0, 1.0))


def train_fusion(
    corpus: Corpus,
    audio_cfg: AudioNetConfig,
    audio_params: ModelParams,
    video_cfg: VideoNetConfig,
    fusion_cfg: FusionLossConfig = FusionLossConfig(),
    schedule: TrainSchedule = TrainSchedule(),
    options: VideoTrainOptions = VideoTrainOptions(),
) -> TrainResult:
    """Fine-tune the video network on the fusion loss with the audio network held fixed."""
    if not audio_params.frozen:
        raise FrozenParamsError("fusion training needs frozen audio parameters; pre-train and freeze the audio model first")
    return _train_video(corpus, video_cfg, fusion_cfg, schedule, options, (audio_cfg, audio_params))


def train_video_only(
    corpus: Corpus,
    video_cfg: VideoNetConfig,
    schedule: TrainSchedule = TrainSchedule(),
    options: VideoTrainOptions = VideoTrainOptions(),
) -> TrainResult:
    return _train_video(corpus, video_cfg, FusionLossConfig(0.0, 1.0), schedule, options, None)


# -- fusion weight search --------------------------------------------------------------
def default_alpha_grid(step: float = 0.1) -> list[float]:
    n = int(round(1.0 / step))
    return [round(i / n, 12) for i in range(n + 1)]


def grid_search_alpha_beta(
    candidates: Sequence[float],
    evaluate: Callable[[FusionLossConfig], float],
    metric: str = "mae",
) -> tuple[FusionLossConfig, dict[float, float]]:
    """Best ``alpha`` (beta = 1 - alpha) by a validation metric.

    ``metric`` is "mae" (minimised) or "accuracy" (maximised). Ties go to the
    smaller alpha, so the result does not depend on candidate order.
    """
    if metric not in ("mae", "accuracy"):
        raise ValueError(f"metric must be 'mae' or 'accuracy', got {metric!r}")
    alphas = sorted({round(float(a), 12) for a in candidates})
    if not alphas:
        raise ValueError("no fusion weight candidates given")
    sign = 1.0 if metric == "mae" else -1.0
    scores: dict[float, float] = {}
    best = None
    for a in alphas:
        cfg = FusionLossConfig.from_alpha(a)
        scores[a] = float(evaluate(cfg))
        if best is None or sign * scores[a] < sign * scores[best]:
            best = a
    return FusionLossConfig.from_alpha(best), scores


def fused_val_mae(corpus: Corpus, result: TrainResult, video_cfg: VideoNetConfig, audio: tuple[ModelConfig, ModelParams], clip_len: int = 8, split: str = "val") -> float:
    """Validation MAE (model space) of the fused recording score under the run's own weights."""
    proto = E.ProtocolConfig(clip_len, corpus.frame_rate, corpus.segment_seconds)
    samples = _split(corpus, split)
    cfg = result.config
    scores = [E.evaluate_recording(s.video, s.audio, cfg.alpha, cfg.beta, proto, (video_cfg, result.params), audio).fused for s in samples]
    return float(np.mean(np.abs(np.array(scores) - np.array([s.target for s in samples]))))
