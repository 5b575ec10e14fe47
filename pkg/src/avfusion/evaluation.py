"""Metrics, ROC curves, BDI-II severity bins, and the recording-level test protocol."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .models import ModelConfig, forward
from .optim import ModelParams
from .tensor import no_grad

BDI_BINS = ((0, 13), (14, 19), (20, 28), (29, 63))


class MetricError(ValueError):
    pass


def _arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if s.size == 0:
        raise MetricError("metrics need at least one prediction")
    if s.size != y.size:
        raise MetricError(f"{s.size} predictions for {y.size} labels")
    if not np.all(np.isfinite(s)):
        raise MetricError("scores must be finite")
    return s, y


def _binary(labels: np.ndarray) -> np.ndarray:
    if not np.all((labels == 0) | (labels == 1)):
        raise MetricError("classification labels must be 0 or 1")
    return labels.astype(bool)


# -- regression ---------------------------------------------------------------
def regression_metrics(predictions, labels) -> tuple[float, float]:
    """(MAE, RMSE)."""
    p, y = _arrays(predictions, labels)
    err = p - y
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err * err)))


class DepressionLevel(enum.Enum):
    MINIMAL = "minimal"
    MILD = "mild"
    MODERATE = "moderate"
    SEVERE = "severe"


def bdi_level(score: float) -> DepressionLevel:
    """BDI-II severity bin; fractional scores are floored before binning."""
    score = float(score)
    if not (0.0 <= score <= 63.0):
        raise MetricError(f"BDI-II score {score} outside [0, 63]")
    s = math.floor(score)
    for level, (lo, hi) in zip(DepressionLevel, BDI_BINS):
        if lo <= s <= hi:
            return level
    raise AssertionError("unreachable")


def level_counts(scores) -> dict[str, int]:
    counts = {lvl.value: 0 for lvl in DepressionLevel}
    for s in np.asarray(scores, dtype=np.float64).reshape(-1):
        counts[bdi_level(min(max(s, 0.0), 63.0)).value] += 1
    return counts


# -- classification -----------------------------------------------------------
def classification_metrics(scores, labels, threshold: float = 0.5) -> tuple[float, float]:
    """(precision, accuracy) with predictions ``score >= threshold``.

    Precision is 0 when nothing is predicted positive.
    """
    s, y = _arrays(scores, labels)
    truth = _binary(y)
    pred = s >= threshold
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    tn = int(np.sum(~pred & ~truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    return precision, (tp + tn) / s.size


def auc_roc(scores, labels) -> tuple[float, list[tuple[float, float, float]]]:
    """Pairwise AUC (ties count half) and ROC points ``(fpr, tpr, threshold)``.

    The curve sweeps every distinct score from high to low, bracketed by
    thresholds +inf (0, 0) and -inf (1, 1).
    """
    s, y = _arrays(scores, labels)
    truth = _binary(y)
    n_pos, n_neg = int(truth.sum()), int((~truth).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")

    # rank-sum with average ranks handles ties exactly as half-counted pairs
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(s.size)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    # integer-valued doubled rank sum keeps the ratio exact for small n
    doubled = int(round(2.0 * ranks[truth].sum())) - n_pos * (n_pos + 1)
    auc = doubled / (2.0 * n_pos * n_neg)

    points = [(0.0, 0.0, math.inf)]
    for thr in np.unique(s)[::-1]:
        pred = s >= thr
        tpr = float(np.sum(pred & truth)) / n_pos
        fpr = float(np.sum(pred & ~truth)) / n_neg
        points.append((fpr, tpr, float(thr)))
    points.append((1.0, 1.0, -math.inf))
    return auc, points


def aggregate_recording(sub_scores) -> float:
    arr = np.asarray(sub_scores, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise MetricError("a recording needs at least one sub-clip score")
    return float(arr.mean())


# -- recording-level protocol ---------------------------------------------------
@dataclass(frozen=True)
class ProtocolConfig:
    clip_len: int = 8
    frame_rate: float = 4.0
    segment_seconds: float = 2.0


def tile_clips(n_frames: int, clip_len: int) -> list[np.ndarray]:
    """Consecutive ``clip_len`` windows covering every frame; the last wraps."""
    if n_frames < 1:
        raise MetricError("recording has no frames")
    n_clips = -(-n_frames // clip_len)
    return [(k * clip_len + np.arange(clip_len)) % n_frames for k in range(n_clips)]


def frame_segment_index(frames: np.ndarray, n_segments: int, proto: ProtocolConfig) -> np.ndarray:
    t = np.asarray(frames) / proto.frame_rate
    return np.minimum((t // proto.segment_seconds).astype(int), n_segments - 1)


def model_scores(cfg: ModelConfig, params: ModelParams, batch: np.ndarray, chunk: int = 8) -> np.ndarray:
    """Forward in chunks without recording a graph; returns a flat score array."""
    out = []
    with no_grad():
        for i in range(0, len(batch), chunk):
            out.append(forward(cfg, params, batch[i : i + chunk]).data.reshape(-1))
    return np.concatenate(out) if out else np.zeros(0)


def segment_scores(audio_cfg: ModelConfig, audio_params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Audio score per 2 s segment; ``features`` is (S, 1, mels, frames)."""
    return model_scores(audio_cfg, audio_params, features)


def clip_audio_score(seg_scores: np.ndarray, frame_idx: np.ndarray, proto: ProtocolConfig) -> float:
    """Mean audio score over the segments under a clip, weighted by frame count."""
    return float(np.mean(seg_scores[frame_segment_index(frame_idx, len(seg_scores), proto)]))


@dataclass
class RecordingScore:
    fused: float
    video: Optional[float]
    audio: Optional[float]
    sub_scores: list[float] = field(default_factory=list)


def evaluate_recording(
    video: Optional[np.ndarray],
    audio: Optional[np.ndarray],
    alpha: float,
    beta: float,
    proto: ProtocolConfig = ProtocolConfig(),
    video_model: Optional[tuple[ModelConfig, ModelParams]] = None,
    audio_model: Optional[tuple[ModelConfig, ModelParams]] = None,
    seg_scores: Optional[np.ndarray] = None,
) -> RecordingScore:
    """Tile the recording into clips, fuse ``beta * video + alpha * audio`` per clip, average.

    ``video`` is (T, 3, H, W) and ``audio`` (S, 1, mels, frames). A zero
    weight lets the corresponding model be omitted; when the video model is
    given its clip scores are always computed and reported. Precomputed per-segment
    audio scores may be passed as ``seg_scores``.
    """
    use_video = video_model is not None and video is not None
    use_audio = alpha != 0.0
    if beta != 0.0 and not use_video:
        raise MetricError("beta > 0 needs the video model and frames")
    if use_audio and seg_scores is None:
        if audio_model is None or audio is None:
            raise MetricError("alpha > 0 needs the audio model and features")
        seg_scores = segment_scores(*audio_model, audio)
    if not use_video:
        # audio only: recording score is the plain segment mean
        a = aggregate_recording(seg_scores)
        return RecordingScore(alpha * a, None, a, [alpha * a])
    clips = tile_clips(len(video), proto.clip_len)
    batch = np.stack([video[idx].transpose(1, 0, 2, 3) for idx in clips])
    v_scores = model_scores(*video_model, batch)
    subs = []
    a_scores = []
    for idx, v in zip(clips, v_scores):
        fused = beta * v
        if use_audio:
            a = clip_audio_score(seg_scores, idx, proto)
            a_scores.append(a)
            fused = fused + alpha * a
        subs.append(float(fused))
    return RecordingScore(
        aggregate_recording(subs),
        aggregate_recording(v_scores),
        aggregate_recording(a_scores) if a_scores else None,
        subs,
    )


# -- reports ----------------------------------------------------------------------
@dataclass
class MetricsReport:
    task: str
    mode: str
    split: str
    n: int
    mae: Optional[float] = None
    rmse: Optional[float] = None
    precision: Optional[float] = None
    accuracy: Optional[float] = None
    auc: Optional[float] = None
    roc: list[tuple[float, float, float]] = field(default_factory=list)
    level_counts: dict[str, int] = field(default_factory=dict)
    recordings: list[tuple[str, float, float]] = field(default_factory=list)  # (id, label, score)

    def __post_init__(self):
        for name in ("precision", "accuracy", "auc"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise MetricError(f"{name}={v} outside [0, 1]")
        if self.mae is not None and self.rmse is not None and self.rmse < self.mae - 1e-12:
            raise MetricError("rmse must not be below mae")

    def summary(self) -> dict[str, Union[str, float, int]]:
        """Ordered scalar fields, skipping those that do not apply to the task."""
        out: dict[str, Union[str, float, int]] = {"task": self.task, "mode": self.mode, "split": self.split, "n": self.n}
        for name in ("mae", "rmse", "precision", "accuracy", "auc"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        for level, count in self.level_counts.items():
            out[f"level_{level}"] = count
        return out


def build_report(task: str, mode: str, split: str, ids: Sequence[str], labels, scores, threshold: float = 0.5, scale: float = 1.0) -> MetricsReport:
    """Metrics from recording-level scores; regression values are multiplied by ``scale``."""
    labels = np.asarray(labels, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    rep = MetricsReport(task, mode, split, len(ids))
    if task == "classification":
        rep.precision, rep.accuracy = classification_metrics(scores, labels, threshold)
        if 0 < labels.sum() < labels.size:
            rep.auc, rep.roc = auc_roc(scores, labels)
        rep.recordings = [(i, float(y), float(s)) for i, y, s in zip(ids, labels, scores)]
    else:
        pred = scores * scale
        rep.mae, rep.rmse = regression_metrics(pred, labels)
        rep.level_counts = level_counts(pred)
        rep.recordings = [(i, float(y), float(s)) for i, y, s in zip(ids, labels, pred)]
    return rep


def fmt(v) -> str:
    """Stable text for CSV cells: ``repr`` round-trips floats exactly."""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf")
    return str(v)


def write_report_csv(report: MetricsReport, path: Union[str, Path]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for k, v in report.summary().items():
        w.writerow([k, fmt(v)])
    Path(path).write_text(buf.getvalue())


def read_report_csv(path: Union[str, Path]) -> dict[str, str]:
    rows = _read_csv(path, ["metric", "value"])
    return {r["metric"]: r["value"] for r in rows}


def write_recordings_csv(report: MetricsReport, path: Union[str, Path]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label", "score"])
    for rid, y, s in report.recordings:
        w.writerow([rid, fmt(y), fmt(s)])
    Path(path).write_text(buf.getvalue())


def write_roc_csv(roc: Sequence[tuple[float, float, float]], path: Union[str, Path]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "fpr", "tpr"])
    for fpr, tpr, thr in roc:
        w.writerow([fmt(thr), fmt(fpr), fmt(tpr)])
    Path(path).write_text(buf.getvalue())


def report_text(report: MetricsReport) -> str:
    rows = [(k, f"{v:.4f}" if isinstance(v, float) else str(v)) for k, v in report.summary().items()]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows) + "\n"


class CsvFormatError(ValueError):
    pass


def _read_csv(path: Union[str, Path], required: Sequence[str]) -> list[dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such CSV file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}:1: empty file") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise CsvFormatError(f"{path}:1: header lacks column(s) {missing}")
        rows = []
        for row in reader:
            if len(row) != len(header):
                raise CsvFormatError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
            rows.append(dict(zip(header, row)))
    return rows


# -- SVG ---------------------------------------------------------------------------
def _polyline_svg(series: dict[str, Sequence[tuple[float, float]]], title: str, xlabel: str, ylabel: str, xlim=None, ylim=None) -> str:
    """Minimal line chart; deterministic text output."""
    width, height, pad = 480, 360, 50
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x0, x1 = xlim if xlim else (min(xs), max(xs))
    y0, y1 = ylim if ylim else (min(ys), max(ys))
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def px(x, y):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad), height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="14" y="{height / 2:.1f}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {height / 2:.1f})">{ylabel}</text>',
    ]
    for v in np.linspace(0, 1, 5):
        tx, _ = px(x0 + v * (x1 - x0), y0)
        _, ty = px(x0, y0 + v * (y1 - y0))
        out.append(f'<text x="{tx:.1f}" y="{height - pad + 16}" text-anchor="middle" font-size="10">{x0 + v * (x1 - x0):.3g}</text>')
        out.append(f'<text x="{pad - 6}" y="{ty + 3:.1f}" text-anchor="end" font-size="10">{y0 + v * (y1 - y0):.3g}</text>')
    for k, (name, pts) in enumerate(series.items()):
        color = colors[k % len(colors)]
        coords = " ".join("{:.2f},{:.2f}".format(*px(x, y)) for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        out.append(f'<text x="{width - pad - 4}" y="{pad + 14 * (k + 1)}" text-anchor="end" font-size="11" fill="{color}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def roc_svg(roc: Sequence[tuple[float, float, float]], auc: Optional[float] = None) -> str:
    title = "ROC" if auc is None else f"ROC (AUC = {auc:.3f})"
    pts = [(fpr, tpr) for fpr, tpr, _ in roc]
    return _polyline_svg({"model": pts, "chance": [(0.0, 0.0), (1.0, 1.0)]}, title, "false positive rate", "true positive rate", (0.0, 1.0), (0.0, 1.0))


def curves_svg(series: dict[str, Sequence[tuple[float, float]]], title: str = "loss", ylabel: str = "loss") -> str:
    return _polyline_svg(series, title, "epoch", ylabel)
