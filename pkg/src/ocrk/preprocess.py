"""Image resizing rules for detection input and recognizer word crops.

Crop shapes in this module are written height x width; page sizes for the
detector are written width x height, as they are usually quoted.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyImage, ImageUnreadable
from .types import BoundingBox, GrayImage


@dataclass(frozen=True)
class PreprocessConfig:
    crop_height: int = 32
    train_width: int = 128
    char_model_size: tuple[int, int] = (32, 100)
    stretch: float = 1.2
    detect_max_dim: int = 800
    allow_upscale: bool = False
    crop_margin: float = 0.3

    def __post_init__(self):
        if min(self.crop_height, self.train_width, self.detect_max_dim, *self.char_model_size) <= 0:
            raise ValueError("preprocess sizes must be positive")
        if self.stretch <= 0:
            raise ValueError("stretch must be positive")


DEFAULT = PreprocessConfig()


def round_half_up(x: float) -> int:
    # the epsilon absorbs float noise such as 100 * 1.2 = 120.00000000000001
    return int(math.floor(x + 0.5 + 1e-9))


def _axis_weights(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with pixel-center alignment; same-size input is returned unchanged."""
    in_h, in_w = pixels.shape
    if (in_h, in_w) == (out_h, out_w):
        return pixels.copy()
    y0, y1, fy = _axis_weights(in_h, out_h)
    x0, x1, fx = _axis_weights(in_w, out_w)
    top = pixels[y0][:, x0] * (1 - fx) + pixels[y0][:, x1] * fx
    bottom = pixels[y1][:, x0] * (1 - fx) + pixels[y1][:, x1] * fx
    return top * (1 - fy)[:, None] + bottom * fy[:, None]


def resize(img: GrayImage, out_h: int, out_w: int) -> GrayImage:
    img.require_nonempty()
    return GrayImage(resize_bilinear(img.pixels, out_h, out_w))


def detection_scale(img: GrayImage, cfg: PreprocessConfig = DEFAULT) -> float:
    img.require_nonempty()
    scale = cfg.detect_max_dim / max(img.width, img.height)
    if scale > 1.0 and not cfg.allow_upscale:
        return 1.0
    return scale


def resize_for_detection(img: GrayImage, cfg: PreprocessConfig = DEFAULT) -> GrayImage:
    scale = detection_scale(img, cfg)
    if scale == 1.0:
        return img
    w = max(1, round_half_up(img.width * scale))
    h = max(1, round_half_up(img.height * scale))
    return resize(img, h, w)


def stretched_width(height: int, width: int, cfg: PreprocessConfig = DEFAULT) -> int:
    return max(1, round_half_up(width * cfg.crop_height / height * cfg.stretch))


def normalize_crop_train(img: GrayImage, cfg: PreprocessConfig = DEFAULT, width: int | None = None) -> GrayImage:
    """Height 32, stretched; squashed to the training width if wider, else right-zero-padded.

    ``width`` overrides ``cfg.train_width`` (the curriculum varies it per epoch).
    """
    img.require_nonempty()
    target = cfg.train_width if width is None else width
    w = stretched_width(img.height, img.width, cfg)
    if w >= target:
        return resize(img, cfg.crop_height, target)
    out = np.zeros((cfg.crop_height, target))
    out[:, :w] = resize_bilinear(img.pixels, cfg.crop_height, w)
    return GrayImage(out)


def normalize_crop_test(img: GrayImage, cfg: PreprocessConfig = DEFAULT) -> GrayImage:
    """Height 32, aspect preserved apart from the constant stretch."""
    img.require_nonempty()
    return resize(img, cfg.crop_height, stretched_width(img.height, img.width, cfg))


def normalize_crop_char(img: GrayImage, cfg: PreprocessConfig = DEFAULT) -> GrayImage:
    """Fixed-size input for the per-position classifier baseline; aspect is ignored."""
    h, w = cfg.char_model_size
    return resize(img, h, w)


def pad_width_to_multiple(img: GrayImage, multiple: int) -> GrayImage:
    extra = (-img.width) % multiple
    if extra == 0:
        return img
    return GrayImage(np.pad(img.pixels, ((0, 0), (0, extra))))


def crop_box(img: GrayImage, box: BoundingBox, margin: float = DEFAULT.crop_margin) -> GrayImage:
    """Cut out a word box grown by ``margin`` times its height on every side."""
    pad = round_half_up(margin * box.height)
    x0 = max(0, int(math.floor(box.x_min)) - pad)
    y0 = max(0, int(math.floor(box.y_min)) - pad)
    x1 = min(img.width, int(math.ceil(box.x_max)) + pad)
    y1 = min(img.height, int(math.ceil(box.y_max)) + pad)
    if x1 <= x0 or y1 <= y0:
        raise EmptyImage(f"box {box.as_tuple()} does not intersect the image")
    return GrayImage(img.pixels[y0:y1, x0:x1])


_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def decode_pgm(data: bytes) -> GrayImage:
    """Decode binary (P5) or ASCII (P2) PGM."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise ImageUnreadable("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageUnreadable("malformed PGM header") from None
    if magic not in (b"P5", b"P2") or maxval <= 0 or maxval > 65535:
        raise ImageUnreadable(f"unsupported PGM variant {magic!r} maxval {maxval}")
    if magic == b"P2":
        values = np.array(data[pos:].split(), dtype=np.float64)
    else:
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        count = width * height
        raw = data[pos : pos + count * dtype.itemsize]
        values = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    if values.size != width * height:
        raise ImageUnreadable("PGM pixel data is truncated")
    return GrayImage(values.reshape(height, width) / maxval)


def encode_pgm(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.to_bytes()


def read_pgm(path) -> GrayImage:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ImageUnreadable(f"cannot read {path}: {exc}") from exc
    return decode_pgm(data)


def write_pgm(path, img: GrayImage) -> None:
    Path(path).write_bytes(encode_pgm(img))
