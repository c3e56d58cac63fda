"""Synthetic word images and pages with detection / recognition ground truth.

Words are drawn from a dictionary, optionally dressed up as URLs, e-mail
addresses or phone numbers, and rendered with the built-in bitmap font at a
random integer scale on a noisy light background.  The recognition crops in
a corpus are cut from the generated pages with the same box-cropping rule
the online pipeline uses, so training and serving see identical crops.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import font
from .errors import EmptyDictionary, PlacementFailed, UnrenderableChar
from .preprocess import DEFAULT as DEFAULT_PREPROCESS
from .preprocess import crop_box, write_pgm
from .types import Alphabet, BoundingBox, GrayImage

log = logging.getLogger(__name__)

# 50 words, lengths 1 to 10
DEFAULT_DICTIONARY = (
    "a", "i", "an", "at", "go", "we", "be", "on",
    "the", "and", "for", "sun", "cat", "dog", "box",
    "text", "word", "read", "blue", "code", "line",
    "light", "paper", "image", "queue", "pixel", "photo",
    "sample", "detect", "random", "vision", "letter", "search",
    "network", "machine", "feature", "picture", "convert",
    "training", "learning", "sentence", "language", "keyboard",
    "character", "alignment", "detection", "recognize", "rectangle",
    "processing", "dictionary",
)

TLDS = ("com", "org", "net", "io")
KINDS = ("plain", "url", "email", "phone")


@dataclass(frozen=True)
class SynthConfig:
    dictionary: tuple[str, ...] = DEFAULT_DICTIONARY
    train_count: int = 2000
    test_count: int = 200
    seed: int = 0
    scale_range: tuple[int, int] = (2, 4)
    noise: float = 0.03
    jitter: int = 1
    ink_range: tuple[float, float] = (0.0, 0.3)
    background_range: tuple[float, float] = (0.75, 0.95)
    # fractions for plain word / URL / e-mail / phone number
    mix: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    canvas_width_range: tuple[int, int] = (480, 800)
    canvas_height_range: tuple[int, int] = (360, 600)
    max_words_per_page: int = 5
    disjoint_vocab: bool = False

    def __post_init__(self):
        if len(self.mix) != len(KINDS) or min(self.mix) < 0 or abs(sum(self.mix) - 1.0) > 1e-9:
            raise ValueError("mix must hold 4 non-negative fractions summing to 1")
        if self.scale_range[0] < 1 or self.scale_range[1] < self.scale_range[0]:
            raise ValueError("scale_range must be 1 <= lo <= hi")
        if self.background_range[0] - self.ink_range[1] < 0.3:
            raise ValueError("ink must be at least 0.3 darker than the background")

    @classmethod
    def with_dictionary_file(cls, path, **kwargs) -> "SynthConfig":
        words = tuple(w.strip() for w in Path(path).read_text(encoding="utf-8").splitlines() if w.strip())
        return cls(dictionary=words, **kwargs)


AUGMENTED_MIX = (0.7, 0.1, 0.1, 0.1)


def _pick(rng: np.random.Generator, words: Sequence[str]) -> str:
    return words[int(rng.integers(len(words)))]


def make_word(rng: np.random.Generator, cfg: SynthConfig, words: Sequence[str] | None = None) -> str:
    """Draw a plain dictionary word or a URL / e-mail / phone-number lookalike."""
    words = cfg.dictionary if words is None else words
    if not words:
        raise EmptyDictionary("dictionary is empty")
    kind = KINDS[int(rng.choice(len(KINDS), p=np.asarray(cfg.mix)))]
    if kind == "plain":
        return _pick(rng, words)
    if kind == "url":
        return f"{_pick(rng, words)}.{_pick(rng, words)}.{_pick(rng, TLDS)}/{_pick(rng, words)}"
    if kind == "email":
        return f"{_pick(rng, words)}@{_pick(rng, words)}.{_pick(rng, TLDS)}"
    sep = _pick(rng, ("-", ".", ""))
    groups = ["".join(str(d) for d in rng.integers(0, 10, size=n)) for n in (3, 3, 4)]
    return sep.join(groups)


def text_mask(text: str, scale: int = 1, offsets: Sequence[int] | None = None) -> np.ndarray:
    """Boolean ink mask of ``text``; ``offsets`` shifts each glyph down by that many pixels."""
    if not text:
        raise UnrenderableChar("cannot render an empty string")
    for ch in text:
        if not font.has_glyph(ch):
            raise UnrenderableChar(f"no glyph for {ch!r}")
    offsets = [0] * len(text) if offsets is None else list(offsets)
    advance = (font.GLYPH_W + font.SPACING) * scale
    width = advance * len(text) - font.SPACING * scale
    height = font.GLYPH_H * scale + max(offsets)
    mask = np.zeros((height, width), dtype=bool)
    for k, ch in enumerate(text):
        g = np.kron(font.glyph(ch), np.ones((scale, scale), dtype=bool))
        y, x = offsets[k], k * advance
        mask[y : y + g.shape[0], x : x + g.shape[1]] |= g
    return mask


def ink_bbox(mask: np.ndarray) -> BoundingBox | None:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return None
    return BoundingBox(cols[0], rows[0], cols[-1] + 1, rows[-1] + 1)


@dataclass
class _Style:
    scale: int
    offsets: list[int]
    ink: float


def _draw_style(text: str, rng: np.random.Generator, cfg: SynthConfig) -> _Style:
    scale = int(rng.integers(cfg.scale_range[0], cfg.scale_range[1] + 1))
    offsets = [int(o) for o in rng.integers(0, cfg.jitter + 1, size=len(text))]
    ink = float(rng.uniform(*cfg.ink_range))
    return _Style(scale, offsets, ink)


def _noisy(shape, level: float, rng: np.random.Generator, noise: float) -> np.ndarray:
    base = np.full(shape, level)
    if noise > 0:
        base += rng.normal(0.0, noise, size=shape)
    return base


def render_word(text: str, rng: np.random.Generator, cfg: SynthConfig = SynthConfig(),
                scale: int | None = None) -> tuple[GrayImage, str]:
    """Render one word as a tight crop (no margin around the glyph cells)."""
    style = _draw_style(text, rng, cfg)
    if scale is not None:
        style.scale = scale
    mask = text_mask(text, style.scale, style.offsets)
    background = float(rng.uniform(*cfg.background_range))
    img = _noisy(mask.shape, background, rng, cfg.noise)
    img[mask] = _noisy(int(mask.sum()), style.ink, rng, cfg.noise)
    return GrayImage(np.clip(img, 0.0, 1.0)), text


def _grown(box: BoundingBox, pad: float) -> BoundingBox:
    return BoundingBox(box.x_min - pad, box.y_min - pad, box.x_max + pad, box.y_max + pad)


def _overlaps(a: BoundingBox, b: BoundingBox) -> bool:
    return a.x_min < b.x_max and b.x_min < a.x_max and a.y_min < b.y_max and b.y_min < a.y_max


def compose_page(words: Sequence[str], rng: np.random.Generator, cfg: SynthConfig = SynthConfig(),
                 size: tuple[int, int] | None = None, max_attempts: int = 100):
    """Place words on a fresh noisy canvas.

    Returns ``(page, [(box, text), ...])`` where each box is the exact ink
    extent of its word.  Words are kept apart by a clearance proportional to
    their scales so that a gap-based word grouper can separate them.
    """
    if size is None:
        width = int(rng.integers(cfg.canvas_width_range[0], cfg.canvas_width_range[1] + 1))
        height = int(rng.integers(cfg.canvas_height_range[0], cfg.canvas_height_range[1] + 1))
    else:
        width, height = size
    background = float(rng.uniform(*cfg.background_range))
    canvas = _noisy((height, width), background, rng, cfg.noise)

    placed: list[tuple[BoundingBox, int]] = []
    truth = []
    for text in words:
        style = _draw_style(text, rng, cfg)
        mask = text_mask(text, style.scale, style.offsets)
        h, w = mask.shape
        edge = int(np.ceil(DEFAULT_PREPROCESS.crop_margin * h)) + 2
        for _ in range(max_attempts):
            if w + 2 * edge > width or h + 2 * edge > height:
                break
            x = int(rng.integers(edge, width - w - edge + 1))
            y = int(rng.integers(edge, height - h - edge + 1))
            local = ink_bbox(mask)
            box = BoundingBox(local.x_min + x, local.y_min + y, local.x_max + x, local.y_max + y)
            ok = all(not _overlaps(_grown(box, 8 * style.scale), _grown(other, 8 * s)) for other, s in placed)
            if ok:
                break
        else:
            raise PlacementFailed(f"could not place {text!r} after {max_attempts} attempts")
        if w + 2 * edge > width or h + 2 * edge > height:
            raise PlacementFailed(f"{text!r} does not fit a {width}x{height} canvas")
        region = canvas[y : y + h, x : x + w]
        region[mask] = _noisy(int(mask.sum()), style.ink, rng, cfg.noise)
        placed.append((box, style.scale))
        truth.append((box, text))
    return GrayImage(np.clip(canvas, 0.0, 1.0)), truth


def vocabularies(cfg: SynthConfig) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Train and test vocabularies; disjoint halves when ``disjoint_vocab`` is set."""
    words = tuple(dict.fromkeys(cfg.dictionary))
    if not words:
        raise EmptyDictionary("dictionary is empty")
    if not cfg.disjoint_vocab:
        return words, words
    if len(words) < 2:
        raise EmptyDictionary("need at least two words for disjoint vocabularies")
    return words[0::2], words[1::2]


@dataclass
class SplitManifests:
    detection: Path
    recognition: Path
    detection_gt: Path
    n_pages: int = 0
    n_words: int = 0


def _write_split(out_dir: Path, split: str, split_id: int, count: int, words: Sequence[str],
                 cfg: SynthConfig) -> SplitManifests:
    split_dir = out_dir / split
    (split_dir / "pages").mkdir(parents=True, exist_ok=True)
    (split_dir / "crops").mkdir(parents=True, exist_ok=True)
    det_lines: list[str] = []
    rec_lines: list[str] = []
    gt_lines: list[str] = []
    made = 0
    page_no = 0
    while made < count:
        for attempt in range(10):
            rng = np.random.default_rng([cfg.seed, split_id, page_no, attempt])
            n = min(int(rng.integers(1, cfg.max_words_per_page + 1)), count - made)
            texts = [make_word(rng, cfg, words) for _ in range(n)]
            try:
                page, truth = compose_page(texts, rng, cfg)
                break
            except PlacementFailed:
                continue
        else:
            raise PlacementFailed(f"page {page_no}: words do not fit the canvas size range")
        page_rel = f"pages/page_{page_no:05d}.pgm"
        write_pgm(split_dir / page_rel, page)
        det_lines.append(page_rel)
        for box, text in truth:
            b = box.as_tuple()
            det_lines.append(f"{b[0]:g} {b[1]:g} {b[2]:g} {b[3]:g}\t{text}")
            gt_lines.append(f"page_{page_no:05d} {b[0]:g} {b[1]:g} {b[2]:g} {b[3]:g}")
            crop_rel = f"crops/crop_{made:06d}.pgm"
            write_pgm(split_dir / crop_rel, crop_box(page, box))
            rec_lines.append(f"{crop_rel}\t{text}")
            made += 1
        det_lines.append("")
        page_no += 1
    manifests = SplitManifests(split_dir / "detection.txt", split_dir / "recognition.txt",
                               split_dir / "detection_gt.txt", page_no, made)
    manifests.detection.write_text("\n".join(det_lines), encoding="utf-8")
    manifests.recognition.write_text("".join(l + "\n" for l in rec_lines), encoding="utf-8")
    manifests.detection_gt.write_text("".join(l + "\n" for l in gt_lines), encoding="utf-8")
    return manifests


def generate_corpus(cfg: SynthConfig, out_dir, alphabet: Alphabet | None = None) -> dict[str, SplitManifests]:
    """Write PGM pages, word crops and manifests for the train and test splits."""
    out_dir = Path(out_dir)
    alphabet = alphabet or Alphabet.default()
    for word in cfg.dictionary:
        if not alphabet.can_encode(word):
            raise UnrenderableChar(f"dictionary word {word!r} is outside the alphabet")
    out_dir.mkdir(parents=True, exist_ok=True)
    train_words, test_words = vocabularies(cfg)
    result = {
        "train": _write_split(out_dir, "train", 0, cfg.train_count, train_words, cfg),
        "test": _write_split(out_dir, "test", 1, cfg.test_count, test_words, cfg),
    }
    log.info("wrote %d train / %d test words to %s", result["train"].n_words, result["test"].n_words, out_dir)
    return result


def read_recognition_manifest(path) -> list[tuple[Path, str]]:
    """``crop_path<TAB>text`` lines; relative paths resolve against the manifest's directory."""
    path = Path(path)
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        image, sep, text = line.partition("\t")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'image_path<TAB>transcription'")
        p = Path(image)
        out.append((p if p.is_absolute() else path.parent / p, text))
    return out


def read_detection_manifest(path) -> list[tuple[Path, list[tuple[BoundingBox, str]]]]:
    path = Path(path)
    records = []
    for block in path.read_text(encoding="utf-8").split("\n\n"):
        lines = [l for l in block.split("\n") if l]
        if not lines:
            continue
        p = Path(lines[0])
        words = []
        for line in lines[1:]:
            coords, _, text = line.partition("\t")
            words.append((BoundingBox(*map(float, coords.split())), text))
        records.append((p if p.is_absolute() else path.parent / p, words))
    return records
