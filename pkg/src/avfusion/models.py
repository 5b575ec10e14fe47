"""Audio Attention-CNN, video Cov-Attention network, and the LSTM / plain 3D-CNN baselines.

Models are plain functions of ``(config, params, input)``; parameters live in
a :class:`~avfusion.optim.ModelParams` built by :func:`init_params`.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Union

import numpy as np

from . import functional as F
from .functional import ShapeError, output_extent
from .optim import ModelParams
from .tensor import Tensor, as_tensor, mean

HEADS = ("classification", "regression")


@dataclass(frozen=True)
class AudioNetConfig:
    channels: tuple[int, ...] = (16, 32, 64, 64, 128)
    attention_hidden: int = 32
    head: str = "classification"

    def __post_init__(self):
        if len(self.channels) != 5:
            raise ValueError(f"the audio network has exactly 5 conv layers, got {len(self.channels)} widths")
        _check_head(self.head)

    kind = "audio_cnn"


@dataclass(frozen=True)
class VideoNetConfig:
    stem_channels: int = 64
    widths: tuple[int, ...] = (64, 128, 256)
    blocks_per_module: int = 2
    expansion: int = 4
    reduction: int = 4
    head: str = "classification"

    def __post_init__(self):
        if len(self.widths) < 1:
            raise ValueError("need at least one residual module")
        if self.blocks_per_module != 2:
            raise ValueError("each residual module holds exactly two bottlenecks")
        for w in self.widths:
            if w % self.reduction:
                raise ValueError(f"attention reduction {self.reduction} does not divide width {w}")
        _check_head(self.head)

    kind = "cov_attention"


@dataclass(frozen=True)
class BaselineConfig:
    kind: str = "lstm"
    hidden: int = 128
    channels: tuple[int, ...] = (16, 32, 64, 128)
    head: str = "classification"

    def __post_init__(self):
        if self.kind not in ("lstm", "plain_3dcnn"):
            raise ValueError(f"baseline kind must be 'lstm' or 'plain_3dcnn', got {self.kind!r}")
        _check_head(self.head)


ModelConfig = Union[AudioNetConfig, VideoNetConfig, BaselineConfig]


def _check_head(head: str) -> None:
    if head not in HEADS:
        raise ValueError(f"head must be one of {HEADS}, got {head!r}")


# -- parameter layout ---------------------------------------------------------
def param_shapes(cfg: ModelConfig, in_features: int = 3) -> dict[str, tuple[int, ...]]:
    """Ordered parameter shapes. ``in_features`` only matters for the LSTM."""
    shapes: dict[str, tuple[int, ...]] = {}
    if isinstance(cfg, AudioNetConfig):
        c_in = 1
        for i, c in enumerate(cfg.channels):
            shapes[f"conv{i}.w"] = (c, c_in, 3, 3)
            shapes[f"conv{i}.b"] = (c,)
            c_in = c
        shapes["att.u"] = (c_in, cfg.attention_hidden)
        shapes["att.v"] = (cfg.attention_hidden,)
        shapes["head.w"] = (c_in, 1)
        shapes["head.b"] = (1,)
    elif isinstance(cfg, VideoNetConfig):
        shapes["stem.w"] = (cfg.stem_channels, 3, 7, 7, 7)
        shapes["stem.b"] = (cfg.stem_channels,)
        c_in = cfg.stem_channels
        for m, width in enumerate(cfg.widths):
            c_out = width * cfg.expansion
            for blk in range(cfg.blocks_per_module):
                p = f"m{m}.b{blk}"
                shapes[f"{p}.reduce.w"] = (width, c_in, 1, 1, 1)
                shapes[f"{p}.reduce.b"] = (width,)
                shapes[f"{p}.att.w1"] = (width, width // cfg.reduction)
                shapes[f"{p}.att.b1"] = (width // cfg.reduction,)
                shapes[f"{p}.att.w2"] = (width // cfg.reduction, width)
                shapes[f"{p}.att.b2"] = (width,)
                shapes[f"{p}.expand.w"] = (c_out, width, 1, 1, 1)
                shapes[f"{p}.expand.b"] = (c_out,)
                if _needs_projection(m, blk, c_in, c_out):
                    shapes[f"{p}.proj.w"] = (c_out, c_in, 1, 1, 1)
                    shapes[f"{p}.proj.b"] = (c_out,)
                c_in = c_out
        shapes["head.w"] = (c_in, 1)
        shapes["head.b"] = (1,)
    elif cfg.kind == "lstm":
        h = cfg.hidden
        shapes["lstm.w_ih"] = (in_features, 4 * h)
        shapes["lstm.w_hh"] = (h, 4 * h)
        shapes["lstm.b"] = (4 * h,)
        shapes["head.w"] = (h, 1)
        shapes["head.b"] = (1,)
    else:
        c_in = 3
        for i, c in enumerate(cfg.channels):
            shapes[f"conv{i}.w"] = (c, c_in, 3, 3, 3)
            shapes[f"conv{i}.b"] = (c,)
            c_in = c
        shapes["head.w"] = (c_in, 1)
        shapes["head.b"] = (1,)
    return shapes


def _needs_projection(module: int, block: int, c_in: int, c_out: int) -> bool:
    return block == 0 and (module > 0 or c_in != c_out)


def init_params(cfg: ModelConfig, seed: int = 0, in_features: int = 3) -> ModelParams:
    """Kaiming-uniform (fan-in) weights, zero biases, drawn in name order.

    The scalar head starts at zero: without normalisation layers the
    un-scaled readout saturates the sigmoid before the first step.
    """
    rng = np.random.default_rng(seed)
    params = ModelParams()
    for name, shape in param_shapes(cfg, in_features).items():
        if len(shape) == 1 or name == "head.w":
            params.add(name, np.zeros(shape))
            continue
        # conv weights are (out, in, *k); matrices here are (in, out)
        fan_in = int(np.prod(shape[1:])) if len(shape) > 2 else shape[0]
        bound = np.sqrt(6.0 / fan_in)
        params.add(name, rng.uniform(-bound, bound, size=shape))
    return params


def count_params(cfg: ModelConfig, in_features: int = 3) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg, in_features).values()))


def _check_params(cfg: ModelConfig, params: ModelParams, in_features: int = 3) -> None:
    expected = param_shapes(cfg, in_features)
    if list(expected) != params.names():
        raise ValueError(f"parameters do not match {type(cfg).__name__}: expected {len(expected)} named tensors, got {len(params)}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValueError(f"parameter {name} has shape {params[name].shape}, config needs {shape}")


def _head(cfg: ModelConfig, params: ModelParams, feats: Tensor) -> Tensor:
    out = F.linear(feats, params["head.w"], params["head.b"])
    return F.sigmoid(out) if cfg.head == "classification" else out


# -- forwards -----------------------------------------------------------------
def audio_forward(cfg: AudioNetConfig, params: ModelParams, x) -> Tensor:
    """(N, 1, n_mels, frames) log-mel batch -> (N, 1) score."""
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"audio network expects (N, 1, mels, frames), got {x.shape}")
    _check_params(cfg, params)
    h = x
    for i in range(len(cfg.channels)):
        h = F.relu(F.conv2d(h, params[f"conv{i}.w"], params[f"conv{i}.b"], 1, 1))
        if h.shape[2] >= 2 and h.shape[3] >= 2:
            h = F.maxpool2d(h, 2, 2)
    h = mean(h, axis=2)  # collapse frequency -> (N, C, frames)
    h = F.temporal_attention(h, params["att.u"], params["att.v"])
    return _head(cfg, params, h)


def video_forward(cfg: VideoNetConfig, params: ModelParams, x) -> Tensor:
    """(N, 3, T, H, W) clip batch -> (N, 1) score."""
    x = as_tensor(x)
    if x.ndim != 5 or x.shape[1] != 3:
        raise ShapeError(f"video network expects (N, 3, T, H, W), got {x.shape}")
    if min(x.shape[2:]) < 1 or any(s + 6 < 7 for s in x.shape[2:]):
        raise ShapeError(f"input {x.shape} too small for the 7x7x7 stem")
    _check_params(cfg, params)
    h = F.relu(F.conv3d(x, params["stem.w"], params["stem.b"], (1, 2, 2), (3, 3, 3)))
    h = F.maxpool3d(h, (3, 3, 3), (1, 2, 2), (1, 1, 1))
    c_in = cfg.stem_channels
    for m, width in enumerate(cfg.widths):
        c_out = width * cfg.expansion
        for blk in range(cfg.blocks_per_module):
            p = f"m{m}.b{blk}"
            stride = (1, 2, 2) if (m > 0 and blk == 0) else (1, 1, 1)
            y = F.relu(F.conv3d(h, params[f"{p}.reduce.w"], params[f"{p}.reduce.b"], stride))
            # attention block stands where a 3x3x3 conv would sit
            y = F.channel_attention(y, params[f"{p}.att.w1"], params[f"{p}.att.b1"], params[f"{p}.att.w2"], params[f"{p}.att.b2"])
            y = F.conv3d(y, params[f"{p}.expand.w"], params[f"{p}.expand.b"])
            if _needs_projection(m, blk, c_in, c_out):
                shortcut = F.conv3d(h, params[f"{p}.proj.w"], params[f"{p}.proj.b"], stride)
            else:
                shortcut = h
            h = F.relu(y + shortcut)
            c_in = c_out
    h = F.adaptive_avg_pool3d(h, (1, 1, 1)).reshape(h.shape[0], c_in)
    return _head(cfg, params, h)


def sequence_features(x) -> Tensor:
    """Per-step feature vectors (N, T, F) for the recurrent baseline.

    Video (N, 3, T, H, W) is reduced to per-frame channel means; a log-mel
    batch (N, 1, mels, frames) yields one mel vector per frame.
    """
    x = as_tensor(x)
    if x.ndim == 5:
        return mean(x, axis=(3, 4)).transpose(0, 2, 1)
    if x.ndim == 4 and x.shape[1] == 1:
        return x.reshape(x.shape[0], x.shape[2], x.shape[3]).transpose(0, 2, 1)
    raise ShapeError(f"cannot build a frame sequence from input {x.shape}")


def baseline_forward(cfg: BaselineConfig, params: ModelParams, x) -> Tensor:
    x = as_tensor(x)
    if cfg.kind == "lstm":
        seq = sequence_features(x)
        _check_params(cfg, params, seq.shape[2])
        h = F.lstm(seq, params["lstm.w_ih"], params["lstm.w_hh"], params["lstm.b"])
        return _head(cfg, params, h)
    if x.ndim != 5 or x.shape[1] != 3:
        raise ShapeError(f"plain_3dcnn expects (N, 3, T, H, W) video, got {x.shape}")
    _check_params(cfg, params)
    h = x
    for i in range(len(cfg.channels)):
        h = F.relu(F.conv3d(h, params[f"conv{i}.w"], params[f"conv{i}.b"], 1, 1))
        if h.shape[3] >= 2 and h.shape[4] >= 2:
            h = F.maxpool3d(h, (1, 2, 2), (1, 2, 2), 0)
    h = F.adaptive_avg_pool3d(h, (1, 1, 1)).reshape(h.shape[0], h.shape[1])
    return _head(cfg, params, h)


def forward(cfg: ModelConfig, params: ModelParams, x) -> Tensor:
    if isinstance(cfg, AudioNetConfig):
        return audio_forward(cfg, params, x)
    if isinstance(cfg, VideoNetConfig):
        return video_forward(cfg, params, x)
    return baseline_forward(cfg, params, x)


def input_features(cfg: ModelConfig, modality: str, n_mels: int = 64) -> int:
    """Per-step feature count the LSTM baseline sees for a modality."""
    return n_mels if modality == "audio" else 3


def video_stage_shapes(cfg: VideoNetConfig, input_shape) -> dict[str, tuple[int, ...]]:
    """Activation shapes through the video network by extent arithmetic alone."""
    n, _, t, h, w = input_shape
    shapes = {}
    t, h, w = (output_extent(s, 7, st, 3) for s, st in zip((t, h, w), (1, 2, 2)))
    shapes["stem"] = (n, cfg.stem_channels, t, h, w)
    t, h, w = (output_extent(s, 3, st, 1) for s, st in zip((t, h, w), (1, 2, 2)))
    shapes["pool"] = (n, cfg.stem_channels, t, h, w)
    for m, width in enumerate(cfg.widths):
        if m > 0:
            h, w = output_extent(h, 1, 2, 0), output_extent(w, 1, 2, 0)
        shapes[f"module{m}"] = (n, width * cfg.expansion, t, h, w)
    shapes["pooled"] = (n, cfg.widths[-1] * cfg.expansion, 1, 1, 1)
    shapes["head"] = (n, 1)
    return shapes


# -- config (de)serialisation -------------------------------------------------
def config_to_dict(cfg: ModelConfig) -> dict[str, str]:
    out = {"model": type(cfg).__name__}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = ",".join(str(e) for e in v) if isinstance(v, tuple) else str(v)
    return out


_CONFIG_TYPES = {c.__name__: c for c in (AudioNetConfig, VideoNetConfig, BaselineConfig)}


def config_from_dict(values: dict[str, str]) -> ModelConfig:
    values = dict(values)
    cls = _CONFIG_TYPES.get(values.pop("model", ""))
    if cls is None:
        raise ValueError("model config lacks a known 'model' entry")
    kwargs = {}
    for f in fields(cls):
        if f.name not in values:
            continue
        raw = values.pop(f.name)
        default = f.default
        if isinstance(default, tuple):
            kwargs[f.name] = tuple(int(e) for e in raw.split(",") if e.strip())
        elif isinstance(default, int):
            kwargs[f.name] = int(raw)
        else:
            kwargs[f.name] = raw
    if values:
        raise ValueError(f"unknown model config keys: {sorted(values)}")
    return cls(**kwargs)
