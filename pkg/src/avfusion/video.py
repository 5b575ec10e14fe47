"""Video front-end: frame loading, similarity-transform face alignment, clip sampling, augmentation."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

OUT_SIZE = 224
CLIP_LEN = 64
MAX_JITTER = 0.1
FRAME_PATTERN = re.compile(r"^frame_(\d+)\.(png|pgm)$")


class VideoError(ValueError):
    pass


class DegenerateLandmarksError(VideoError):
    pass


class AugmentConfigError(VideoError):
    pass


@dataclass
class FrameSequence:
    frames: np.ndarray  # (T, 3, H, W) in [0, 1]
    landmarks: np.ndarray  # (T, 3, 2): left eye, right eye, mouth centre as (x, y)
    frame_rate: float = 4.0

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[0] < 1 or self.frames.shape[1] != 3:
            raise VideoError(f"frames must be (T>=1, 3, H, W), got {self.frames.shape}")
        if self.landmarks.shape != (self.frames.shape[0], 3, 2):
            raise VideoError(f"landmarks must be ({self.frames.shape[0]}, 3, 2), got {self.landmarks.shape}")
        h, w = self.frames.shape[2:]
        xs, ys = self.landmarks[..., 0], self.landmarks[..., 1]
        if not (np.all(np.isfinite(self.landmarks)) and xs.min() >= 0 and ys.min() >= 0 and xs.max() <= w - 1 and ys.max() <= h - 1):
            raise VideoError(f"landmarks fall outside the {w}x{h} frame")
        if self.frame_rate <= 0:
            raise VideoError(f"frame rate must be positive, got {self.frame_rate}")

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class AlignmentTransform:
    """x_out = scale * R(theta) @ x_src + (tx, ty), image coordinates (x right, y down)."""

    theta: float
    scale: float
    tx: float
    ty: float

    def __post_init__(self):
        if not self.scale > 0:
            raise VideoError(f"similarity scale must be positive, got {self.scale}")

    @property
    def matrix(self) -> np.ndarray:
        c, s = np.cos(self.theta) * self.scale, np.sin(self.theta) * self.scale
        return np.array([[c, -s, self.tx], [s, c, self.ty]])

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        m = self.matrix
        return pts @ m[:, :2].T + m[:, 2]

    def inverse_apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64) - np.array([self.tx, self.ty])
        c, s = np.cos(self.theta), np.sin(self.theta)
        rinv = np.array([[c, s], [-s, c]]) / self.scale
        return pts @ rinv.T


@dataclass
class AugmentConfig:
    flip_prob: float = 0.5
    brightness: float = MAX_JITTER
    contrast: float = MAX_JITTER
    saturation: float = MAX_JITTER
    hue: float = MAX_JITTER
    seed: int = 0

    def __post_init__(self):
        for name in ("brightness", "contrast", "saturation", "hue"):
            v = getattr(self, name)
            if not 0.0 <= v <= MAX_JITTER:
                raise AugmentConfigError(f"{name} delta {v} outside [0, {MAX_JITTER}]")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise AugmentConfigError(f"flip_prob {self.flip_prob} outside [0, 1]")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(flip_prob=0.0, brightness=0.0, contrast=0.0, saturation=0.0, hue=0.0)


# -- alignment --------------------------------------------------------------
def alignment_targets(out_size: int = OUT_SIZE) -> tuple[np.ndarray, float]:
    """Output eye midpoint and vertical eye-to-mouth distance."""
    return np.array([out_size / 2.0, out_size / 3.0]), out_size / 3.0


def compute_alignment(landmarks, out_size: int = OUT_SIZE) -> AlignmentTransform:
    """Similarity transform levelling the eyes and fixing the eye-mouth distance.

    The eye midpoint lands at (out/2, out/3) and the mouth one third of the
    output height below it.
    """
    lm = np.asarray(landmarks, dtype=np.float64).reshape(3, 2)
    left, right, mouth = lm
    eye_vec = right - left
    eye_dist = float(np.hypot(*eye_vec))
    if eye_dist < 1e-9:
        raise DegenerateLandmarksError("eye landmarks coincide")
    theta = -np.arctan2(eye_vec[1], eye_vec[0])
    c, s = np.cos(theta), np.sin(theta)
    mid = 0.5 * (left + right)
    rel = mouth - mid
    drop = s * rel[0] + c * rel[1]  # vertical offset after rotation
    if drop <= 1e-9 * max(eye_dist, 1.0):
        raise DegenerateLandmarksError("mouth lies on or above the eye line")
    target_mid, target_drop = alignment_targets(out_size)
    scale = target_drop / drop
    rot_mid = scale * np.array([c * mid[0] - s * mid[1], s * mid[0] + c * mid[1]])
    tx, ty = target_mid - rot_mid
    return AlignmentTransform(float(theta), float(scale), float(tx), float(ty))


def _bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample (..., H, W) at float coords; outside the image reads as 0."""
    h, w = img.shape[-2:]
    padded = np.zeros(img.shape[:-2] + (h + 2, w + 2))
    padded[..., 1:-1, 1:-1] = img
    # shift into padded coordinates and clamp to the zero border
    px = np.clip(xs + 1.0, 0.0, w + 1.0)
    py = np.clip(ys + 1.0, 0.0, h + 1.0)
    x0 = np.minimum(np.floor(px).astype(int), w)
    y0 = np.minimum(np.floor(py).astype(int), h)
    fx, fy = px - x0, py - y0
    v00 = padded[..., y0, x0]
    v01 = padded[..., y0, x0 + 1]
    v10 = padded[..., y0 + 1, x0]
    v11 = padded[..., y0 + 1, x0 + 1]
    return (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy


def apply_alignment(frames: np.ndarray, transform: AlignmentTransform, out=(OUT_SIZE, OUT_SIZE)) -> np.ndarray:
    """Warp (T, 3, H, W) or (3, H, W) frames into the aligned output grid."""
    oh, ow = out
    gy, gx = np.mgrid[0:oh, 0:ow].astype(np.float64)
    src = transform.inverse_apply(np.stack([gx.ravel(), gy.ravel()], axis=1))
    res = _bilinear(np.asarray(frames, dtype=np.float64), src[:, 0], src[:, 1])
    return res.reshape(np.shape(frames)[:-2] + (oh, ow))


def align_sequence(seq: FrameSequence, out_size: int = OUT_SIZE) -> np.ndarray:
    """Align each frame with the transform from its own landmarks."""
    out = np.empty((len(seq), 3, out_size, out_size))
    for t in range(len(seq)):
        out[t] = apply_alignment(seq.frames[t], compute_alignment(seq.landmarks[t], out_size), (out_size, out_size))
    return out


# -- clip sampling and augmentation -------------------------------------------
def sample_clip(frames: np.ndarray, clip_len: int = CLIP_LEN, rng: Optional[np.random.Generator] = None, start: Optional[int] = None):
    """Contiguous ``clip_len`` window at a uniform start; short inputs wrap around.

    Returns ``(clip, start)``.
    """
    total = len(frames)
    if total < 1:
        raise VideoError("cannot sample a clip from an empty sequence")
    if start is None:
        if total <= clip_len:
            start = 0
        else:
            rng = rng if rng is not None else np.random.default_rng()
            start = int(rng.integers(0, total - clip_len + 1))
    idx = (start + np.arange(clip_len)) % total
    return np.asarray(frames)[idx], start


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Channel axis -3; hue in [0, 1)."""
    r, g, b = rgb[..., 0, :, :], rgb[..., 1, :, :], rgb[..., 2, :, :]
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    delta = maxc - minc
    safe = np.where(delta > 0, delta, 1.0)
    sat = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    rc, gc, bc = (maxc - r) / safe, (maxc - g) / safe, (maxc - b) / safe
    hue = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    hue = np.where(delta > 0, (hue / 6.0) % 1.0, 0.0)
    return np.stack([hue, sat, maxc], axis=-3)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0, :, :], hsv[..., 1, :, :], hsv[..., 2, :, :]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-3)


def augment(clip: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """One flip decision and one jitter draw, shared by every frame of the clip.

    ``clip`` is (T, 3, H, W). Zero deltas skip their stage entirely, so a
    fully disabled config returns the input bit for bit.
    """
    flip = rng.random() < config.flip_prob
    d_bright = rng.uniform(-1.0, 1.0) * config.brightness
    d_contrast = rng.uniform(-1.0, 1.0) * config.contrast
    d_sat = rng.uniform(-1.0, 1.0) * config.saturation
    d_hue = rng.uniform(-1.0, 1.0) * config.hue

    out = np.array(clip, dtype=np.float64)
    if flip:
        out = out[..., ::-1].copy()
    if d_bright:
        out = out + d_bright
    if d_contrast:
        mu = out.mean(axis=(-3, -2, -1), keepdims=True)
        out = mu + (out - mu) * (1.0 + d_contrast)
    if d_sat or d_hue:
        hsv = rgb_to_hsv(np.clip(out, 0.0, 1.0))
        if d_sat:
            hsv[..., 1, :, :] = np.clip(hsv[..., 1, :, :] * (1.0 + d_sat), 0.0, 1.0)
        if d_hue:
            # rotate by d_hue * pi radians of the colour wheel
            hsv[..., 0, :, :] = (hsv[..., 0, :, :] + d_hue / 2.0) % 1.0
        out = hsv_to_rgb(hsv)
    if d_bright or d_contrast or d_sat or d_hue:
        out = np.clip(out, 0.0, 1.0)
    return out


# -- I/O ----------------------------------------------------------------------
def read_landmarks(path: Union[str, Path]) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise VideoError(f"{path}:{lineno}: expected 6 numbers, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise VideoError(f"{path}:{lineno}: non-numeric landmark value") from None
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3, 2)


def write_landmarks(path: Union[str, Path], landmarks: np.ndarray) -> None:
    lines = [" ".join(f"{v:.6f}" for v in row.reshape(-1)) for row in np.asarray(landmarks)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_image(path: Union[str, Path]) -> np.ndarray:
    """(3, H, W) float image in [0, 1]; grayscale is replicated."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im.convert("RGB") if mode not in ("RGB", "L") else im)
    except (OSError, SyntaxError) as exc:
        raise VideoError(f"unreadable image {path}: {exc}") from None
    if arr.dtype != np.uint8:
        raise VideoError(f"{path}: expected 8-bit pixels, got {arr.dtype}")
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_image(path: Union[str, Path], image: np.ndarray) -> None:
    """Write a (3, H, W) float image or an (H, W) uint8 array."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr).save(path)


def load_frames(frames_dir: Union[str, Path], landmarks_file: Union[str, Path], frame_rate: float = 4.0) -> FrameSequence:
    frames_dir = Path(frames_dir)
    if not frames_dir.is_dir():
        raise FileNotFoundError(f"no such frame directory: {frames_dir}")
    indexed = []
    for p in frames_dir.iterdir():
        m = FRAME_PATTERN.match(p.name)
        if m:
            indexed.append((int(m.group(1)), p))
    indexed.sort()
    if not indexed:
        raise VideoError(f"{frames_dir}: no frame_NNNNNN.png/.pgm files")
    expected = list(range(indexed[0][0], indexed[0][0] + len(indexed)))
    if [i for i, _ in indexed] != expected:
        missing = sorted(set(range(indexed[0][0], indexed[-1][0] + 1)) - {i for i, _ in indexed})
        raise VideoError(f"{frames_dir}: missing frame indices {missing[:5]}")
    landmarks = read_landmarks(landmarks_file)
    if len(landmarks) != len(indexed):
        raise VideoError(f"{landmarks_file}: {len(landmarks)} landmark rows for {len(indexed)} frames")
    frames = np.stack([read_image(p) for _, p in indexed])
    return FrameSequence(frames, landmarks, frame_rate)
