"""Detection metrics: IoU, precision/recall, AP, mAP over IoU ranges, F1.

Single class (text).  Average precision is the plain step sum
``sum_n (R_n - R_{n-1}) * P_n`` over distinct score thresholds, without
any precision interpolation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import NoGroundTruth
from .types import BoundingBox, ScoredBox

IOU_RANGE = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    # two zero-area boxes have no meaningful overlap
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(a: Sequence[BoundingBox], b: Sequence[BoundingBox]) -> np.ndarray:
    if not a or not b:
        return np.zeros((len(a), len(b)))
    A = np.array([x.as_tuple() for x in a])
    B = np.array([x.as_tuple() for x in b])
    iw = np.minimum(A[:, None, 2], B[None, :, 2]) - np.maximum(A[:, None, 0], B[None, :, 0])
    ih = np.minimum(A[:, None, 3], B[None, :, 3]) - np.maximum(A[:, None, 1], B[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (A[:, 2] - A[:, 0]) * (A[:, 3] - A[:, 1])
    area_b = (B[:, 2] - B[:, 0]) * (B[:, 3] - B[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


@dataclass(frozen=True)
class PrPoint:
    score_threshold: float
    precision: float
    recall: float


@dataclass
class EvalItem:
    predictions: list[ScoredBox] = field(default_factory=list)
    ground_truth: list[BoundingBox] = field(default_factory=list)
    image_id: str = ""


def match_detections(items: Sequence[EvalItem], iou_threshold: float):
    """Greedy matching of pooled predictions to ground truth.

    Returns ``(scores, is_tp, n_gt)`` with scores in descending order (stable
    for ties).  Each prediction takes the best-overlapping still-unmatched
    ground-truth box of its own image.
    """
    pooled = []
    for item_no, item in enumerate(items):
        for pred_no, p in enumerate(item.predictions):
            pooled.append((p.score, item_no, pred_no))
    pooled.sort(key=lambda r: -r[0])

    overlaps = [iou_matrix([p.box for p in it.predictions], it.ground_truth) for it in items]
    taken = [np.zeros(len(it.ground_truth), dtype=bool) for it in items]
    n_gt = sum(len(it.ground_truth) for it in items)

    scores = np.empty(len(pooled))
    is_tp = np.zeros(len(pooled), dtype=bool)
    for k, (score, item_no, pred_no) in enumerate(pooled):
        scores[k] = score
        row = overlaps[item_no]
        if row.shape[1] == 0:
            continue
        cand = np.where(taken[item_no], -1.0, row[pred_no])
        best = int(np.argmax(cand))
        if cand[best] >= iou_threshold:
            taken[item_no][best] = True
            is_tp[k] = True
    return scores, is_tp, n_gt


def pr_curve(items: Sequence[EvalItem], iou_threshold: float) -> list[PrPoint]:
    """Precision/recall at every distinct score threshold, highest first."""
    scores, is_tp, n_gt = match_detections(items, iou_threshold)
    if n_gt == 0:
        raise NoGroundTruth("no ground-truth boxes to evaluate against")
    if len(scores) == 0:
        return []
    tp = np.cumsum(is_tp)
    n = np.arange(1, len(scores) + 1)
    # last index of every run of equal scores
    ends = np.flatnonzero(np.append(scores[1:] != scores[:-1], True))
    return [PrPoint(float(scores[e]), float(tp[e] / n[e]), float(tp[e] / n_gt)) for e in ends]


def _ap_from_curve(points: Sequence[PrPoint]) -> float:
    ap = 0.0
    prev_recall = 0.0
    for p in points:
        ap += (p.recall - prev_recall) * p.precision
        prev_recall = p.recall
    return ap


def average_precision(items: Sequence[EvalItem], iou_threshold: float, per_image: bool = False) -> float:
    """AP at one IoU threshold.

    By default predictions are pooled over the whole dataset; ``per_image``
    averages the AP of every image that has ground truth instead.
    """
    if per_image:
        scored = [it for it in items if it.ground_truth]
        if not scored:
            raise NoGroundTruth("no ground-truth boxes to evaluate against")
        return float(np.mean([_ap_from_curve(pr_curve([it], iou_threshold)) for it in scored]))
    return _ap_from_curve(pr_curve(items, iou_threshold))


def map_at(items: Sequence[EvalItem], iou_threshold: float = 0.5, per_image: bool = False) -> float:
    return average_precision(items, iou_threshold, per_image=per_image)


def map_per_threshold(items: Sequence[EvalItem], per_image: bool = False) -> dict[float, float]:
    return {t: map_at(items, t, per_image=per_image) for t in IOU_RANGE}


def map_range(items: Sequence[EvalItem], per_image: bool = False) -> float:
    """mAP@0.5:0.95, the mean over IoU thresholds 0.50, 0.55, ..., 0.95."""
    values = map_per_threshold(items, per_image=per_image)
    return sum(values.values()) / len(values)


def precision_recall_at(items: Sequence[EvalItem], iou_threshold: float, score_threshold: float):
    scores, is_tp, n_gt = match_detections(items, iou_threshold)
    kept = scores >= score_threshold
    n_pred = int(kept.sum())
    tp = int(is_tp[kept].sum())
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt if n_gt else 0.0
    return precision, recall


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def f1_at(items: Sequence[EvalItem], iou_threshold: float, score_threshold: float) -> float:
    return f1_score(*precision_recall_at(items, iou_threshold, score_threshold))


def _parse_box_file(path, with_score: bool) -> dict[str, list]:
    expected = 6 if with_score else 5
    out: dict[str, list] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        if len(fields) != expected:
            raise ValueError(f"{path}:{lineno}: expected {expected} fields, got {len(fields)}")
        box = BoundingBox(*map(float, fields[1:5]))
        out.setdefault(fields[0], []).append(ScoredBox(box, float(fields[5])) if with_score else box)
    return out


def read_detections(path) -> dict[str, list[ScoredBox]]:
    """``image_id x_min y_min x_max y_max score`` per line."""
    return _parse_box_file(path, with_score=True)


def read_ground_truth(path) -> dict[str, list[BoundingBox]]:
    """``image_id x_min y_min x_max y_max`` per line."""
    return _parse_box_file(path, with_score=False)


def write_detections(path, records: Iterable[tuple[str, ScoredBox]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, sb in records:
            b = sb.box
            fh.write(f"{image_id} {b.x_min:g} {b.y_min:g} {b.x_max:g} {b.y_max:g} {sb.score:.6f}\n")


def write_ground_truth(path, records: Iterable[tuple[str, BoundingBox]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, b in records:
            fh.write(f"{image_id} {b.x_min:g} {b.y_min:g} {b.x_max:g} {b.y_max:g}\n")


def build_eval_items(predictions: dict[str, list[ScoredBox]], ground_truth: dict[str, list[BoundingBox]]) -> list[EvalItem]:
    ids = list(dict.fromkeys([*ground_truth, *predictions]))
    return [EvalItem(list(predictions.get(i, [])), list(ground_truth.get(i, [])), i) for i in ids]
