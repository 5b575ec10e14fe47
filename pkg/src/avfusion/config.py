"""``key = value`` configuration with dotted keys, typed defaults, and flag overrides.

Lines starting with ``#`` are comments. Tuples are written comma-separated.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Union

from .datagen import SynthConfig
from .models import AudioNetConfig, VideoNetConfig
from .preprocess import PreprocessConfig
from .training import FusionLossConfig, StageSchedule, TrainSchedule, VideoTrainOptions
from .video import AugmentConfig

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "batch_size": 8,
    "task": "auto",
    "synth.n_samples": 188,
    "synth.task": "classification",
    "synth.audio_shift_hz": 400.0,
    "synth.motion_px": 2.0,
    "synth.noise_level": 0.03,
    "synth.frames": 8,
    "synth.height": 32,
    "synth.width": 32,
    "synth.frame_rate": 4.0,
    "synth.sample_rate": 16000,
    "split.ratio": (6, 1, 3),
    "preprocess.out_size": 224,
    "preprocess.n_mels": 64,
    "preprocess.segment_seconds": 2.0,
    "preprocess.denoise": True,
    "audio.channels": (16, 32, 64, 64, 128),
    "audio.attention_hidden": 32,
    "video.stem_channels": 64,
    "video.widths": (64, 128, 256),
    "video.expansion": 4,
    "video.reduction": 4,
    "video.clip_len": 64,
    "augment.flip_prob": 0.5,
    "augment.brightness": 0.1,
    "augment.contrast": 0.1,
    "augment.saturation": 0.1,
    "augment.hue": 0.1,
    "fusion.alpha": 0.6,
    "fusion.beta": 0.4,
    "fusion.grid": (),
    "fusion.grid_metric": "auto",
    "schedule.audio.epochs": 100,
    "schedule.audio.lr": 1e-4,
    "schedule.fusion.epochs": 150,
    "schedule.fusion.lr": 1e-3,
    "eval.threshold": 0.5,
}

# tuple-valued keys holding floats rather than ints
FLOAT_TUPLES = {"fusion.grid"}


class ConfigError(ValueError):
    pass


def _parse_value(key: str, raw: str, where: str):
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            conv = float if key in FLOAT_TUPLES else int
            return tuple(conv(p) for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{where}: bad value {raw!r} for {key} (expected {type(default).__name__})") from None


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(format_value(e) for e in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_kv(path: Union[str, Path]) -> list[tuple[int, str, str]]:
    """Raw ``(line number, key, value)`` triples."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = text.split("=", 1)
        out.append((lineno, key.strip(), value.strip()))
    return out


def write_kv(path: Union[str, Path], values: Mapping[str, Any]) -> None:
    Path(path).write_text("".join(f"{k} = {format_value(v)}\n" for k, v in values.items()))


@dataclass
class CliConfig:
    values: dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = ()) -> "CliConfig":
        cfg = cls()
        if path is not None:
            if not Path(path).is_file():
                raise ConfigError(f"config file not found: {path}")
            for lineno, key, raw in read_kv(path):
                cfg.set(key, raw, f"{path}:{lineno}")
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not KEY=VALUE")
            key, raw = item.split("=", 1)
            cfg.set(key.strip(), raw, "--set")
        return cfg

    def set(self, key: str, raw: str, where: str = "override") -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        self.values[key] = _parse_value(key, raw, where)

    def __getitem__(self, key: str):
        return self.values[key]

    def dump(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.values.items())

    # -- typed views ---------------------------------------------------------------
    def synth(self) -> SynthConfig:
        v = self.values
        return SynthConfig(
            n_samples=v["synth.n_samples"],
            task=v["synth.task"],
            audio_shift_hz=v["synth.audio_shift_hz"],
            motion_px=v["synth.motion_px"],
            noise_level=v["synth.noise_level"],
            frames=v["synth.frames"],
            height=v["synth.height"],
            width=v["synth.width"],
            frame_rate=v["synth.frame_rate"],
            sample_rate=v["synth.sample_rate"],
            seed=v["seed"],
        )

    def preprocess(self) -> PreprocessConfig:
        v = self.values
        return PreprocessConfig(v["preprocess.out_size"], v["preprocess.n_mels"], v["preprocess.segment_seconds"], v["preprocess.denoise"], v["synth.frame_rate"])

    def audio_net(self, task: str) -> AudioNetConfig:
        return AudioNetConfig(tuple(self.values["audio.channels"]), self.values["audio.attention_hidden"], task)

    def video_net(self, task: str) -> VideoNetConfig:
        v = self.values
        return VideoNetConfig(v["video.stem_channels"], tuple(v["video.widths"]), 2, v["video.expansion"], v["video.reduction"], task)

    def schedule(self) -> TrainSchedule:
        v = self.values
        return TrainSchedule(
            StageSchedule(v["schedule.audio.epochs"], v["schedule.audio.lr"]),
            StageSchedule(v["schedule.fusion.epochs"], v["schedule.fusion.lr"]),
            v["batch_size"],
            v["seed"],
        )

    def fusion(self) -> FusionLossConfig:
        return FusionLossConfig(self.values["fusion.alpha"], self.values["fusion.beta"])

    def video_options(self) -> VideoTrainOptions:
        v = self.values
        aug = AugmentConfig(v["augment.flip_prob"], v["augment.brightness"], v["augment.contrast"], v["augment.saturation"], v["augment.hue"], v["seed"])
        return VideoTrainOptions(v["video.clip_len"], aug)
