"""Detection post-processing: anchors, top-N truncation, NMS, SoftNMS.

Also hosts the heuristic word detector that stands in for a trained region
proposal network so the pipeline runs end to end.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage

from .det_metrics import iou, iou_matrix
from .types import BoundingBox, GrayImage, ScoredBox

# {0.5, 1, 2} plus wide ratios (width / height) for text lines
DEFAULT_ASPECT_RATIOS = (0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0)
DEFAULT_SCALES = (32.0, 64.0, 128.0, 256.0, 512.0)


@dataclass(frozen=True)
class AnchorConfig:
    aspect_ratios: tuple[float, ...] = DEFAULT_ASPECT_RATIOS
    scales: tuple[float, ...] = DEFAULT_SCALES
    stride: float = 16.0

    @property
    def anchors_per_location(self) -> int:
        return len(self.aspect_ratios) * len(self.scales)


SOFT_MODES = ("hard", "linear", "gaussian")


@dataclass(frozen=True)
class PostprocessConfig:
    top_n: int = 100
    nms_iou: float = 0.5
    soft_mode: str = "hard"
    sigma: float = 0.5
    score_floor: float = 0.001

    def __post_init__(self):
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")
        if not 0.0 < self.nms_iou < 1.0:
            raise ValueError("nms_iou must lie in (0, 1)")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.soft_mode not in SOFT_MODES:
            raise ValueError(f"soft_mode must be one of {SOFT_MODES}")


def generate_anchors(cfg: AnchorConfig, feat_w: int, feat_h: int) -> list[BoundingBox]:
    """Anchors for every feature-map cell, row-major, scales inner to ratios."""
    if feat_w <= 0 or feat_h <= 0:
        raise ValueError("feature map dimensions must be positive")
    shapes = []
    for r in cfg.aspect_ratios:
        for s in cfg.scales:
            shapes.append((s * math.sqrt(r), s / math.sqrt(r)))
    out = []
    for gy in range(feat_h):
        cy = (gy + 0.5) * cfg.stride
        for gx in range(feat_w):
            cx = (gx + 0.5) * cfg.stride
            for w, h in shapes:
                out.append(BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2))
    return out


def _by_score(boxes: Sequence[ScoredBox]) -> list[ScoredBox]:
    return sorted(boxes, key=lambda b: -b.score)


def take_top_n(boxes: Sequence[ScoredBox], n: int) -> list[ScoredBox]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return _by_score(boxes)[:n]


def nms(boxes: Sequence[ScoredBox], iou_threshold: float) -> list[ScoredBox]:
    """Greedy hard NMS: a box survives unless it overlaps a kept box by more than the threshold."""
    ordered = _by_score(boxes)
    if not ordered:
        return []
    overlaps = iou_matrix([b.box for b in ordered], [b.box for b in ordered])
    suppressed = np.zeros(len(ordered), dtype=bool)
    kept = []
    for i, b in enumerate(ordered):
        if suppressed[i]:
            continue
        kept.append(b)
        suppressed |= overlaps[i] > iou_threshold
    return kept


def soft_nms(boxes: Sequence[ScoredBox], cfg: PostprocessConfig = PostprocessConfig()) -> list[ScoredBox]:
    """SoftNMS: overlapping boxes get their score decayed instead of being removed.

    linear:   s * (1 - iou) when iou > nms_iou, unchanged otherwise
    gaussian: s * exp(-iou^2 / sigma)
    Boxes whose decayed score falls below ``score_floor`` are dropped.
    """
    if cfg.soft_mode == "hard":
        return nms(boxes, cfg.nms_iou)
    pending = [(b.box, b.score) for b in boxes]
    out = []
    while pending:
        best = max(range(len(pending)), key=lambda k: (pending[k][1], -k))
        box, score = pending.pop(best)
        out.append(ScoredBox(box, score))
        survivors = []
        for other, s in pending:
            o = iou(box, other)
            if cfg.soft_mode == "linear":
                if o > cfg.nms_iou:
                    s = s * (1.0 - o)
            else:
                s = s * math.exp(-(o * o) / cfg.sigma)
            if s >= cfg.score_floor:
                survivors.append((other, s))
        pending = survivors
    return _by_score(out)


def postprocess(boxes: Sequence[ScoredBox], cfg: PostprocessConfig = PostprocessConfig()) -> list[ScoredBox]:
    return soft_nms(take_top_n(boxes, cfg.top_n), cfg)


class Detector(Protocol):
    def detect(self, img: GrayImage) -> list[ScoredBox]: ...


def otsu_threshold(pixels: np.ndarray, bins: int = 256) -> float:
    hist, edges = np.histogram(pixels, bins=bins, range=(0.0, 1.0))
    centers = (edges[:-1] + edges[1:]) / 2
    w0 = np.cumsum(hist).astype(np.float64)
    w1 = w0[-1] - w0
    m0 = np.cumsum(hist * centers)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = m0 / w0
        mu1 = (m0[-1] - m0) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between = np.nan_to_num(between)
    return float(edges[int(np.argmax(between)) + 1])


@dataclass
class HeuristicWordDetector:
    """Dark-on-light word finder: Otsu binarisation, connected components, gap merging.

    Two components join the same word when their vertical extents come
    within ``vertical_gap`` stroke widths and their horizontal gap is below
    ``merge_gap`` stroke widths.  The stroke width of a component is its
    lower-quartile horizontal run length, capped at its height.
    """

    merge_gap: float = 4.5
    vertical_gap: float = 1.5
    min_contrast: float = 0.2
    min_pixels: int = 2

    def detect(self, img: GrayImage) -> list[ScoredBox]:
        px = img.pixels
        if px.size == 0 or px.max() - px.min() < self.min_contrast:
            return []
        ink = px < otsu_threshold(px)
        labels, n = ndimage.label(ink, structure=np.ones((3, 3)))
        if n == 0:
            return []
        comps = []
        for k, sl in enumerate(ndimage.find_objects(labels), 1):
            mask = labels[sl] == k
            if mask.sum() < self.min_pixels:
                continue
            comps.append((sl, _stroke_width(mask)))
        parent = list(range(len(comps)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i in range(len(comps)):
            (yi, xi), si = comps[i]
            for j in range(i + 1, len(comps)):
                (yj, xj), sj = comps[j]
                stroke = max(si, sj)
                vgap = max(yi.start, yj.start) - min(yi.stop, yj.stop)
                hgap = max(xi.start, xj.start) - min(xi.stop, xj.stop)
                if vgap <= self.vertical_gap * stroke and hgap < self.merge_gap * stroke:
                    parent[find(i)] = find(j)

        groups: dict[int, list[int]] = {}
        for i in range(len(comps)):
            groups.setdefault(find(i), []).append(i)
        out = []
        for members in groups.values():
            y0 = min(comps[m][0][0].start for m in members)
            y1 = max(comps[m][0][0].stop for m in members)
            x0 = min(comps[m][0][1].start for m in members)
            x1 = max(comps[m][0][1].stop for m in members)
            area = (y1 - y0) * (x1 - x0)
            density = float(ink[y0:y1, x0:x1].sum()) / area
            out.append(ScoredBox(BoundingBox(x0, y0, x1, y1), min(max(density, 0.0), 1.0)))
        out.sort(key=lambda b: (b.box.y_min, b.box.x_min))
        return out


def _stroke_width(mask: np.ndarray) -> float:
    runs = []
    for row in mask:
        padded = np.concatenate(([False], row, [False]))
        edges = np.flatnonzero(padded[1:] != padded[:-1])
        runs.extend(edges[1::2] - edges[0::2])
    return float(min(np.percentile(runs, 25, method="lower"), mask.shape[0]))
