import numpy as np
import pytest

from ocrk.det_metrics import (
    IOU_RANGE,
    EvalItem,
    average_precision,
    build_eval_items,
    f1_at,
    f1_score,
    iou,
    map_at,
    map_per_threshold,
    map_range,
    pr_curve,
    precision_recall_at,
    read_detections,
    read_ground_truth,
    write_detections,
    write_ground_truth,
)
from ocrk.errors import NoGroundTruth
from ocrk.types import BoundingBox, ScoredBox

from oracles import ap_threshold_sweep, box_iou


def B(*c):
    return BoundingBox(*c)


def test_iou_examples():
    assert iou(B(0, 0, 2, 2), B(0, 0, 2, 2)) == 1.0
    assert iou(B(0, 0, 2, 2), B(2, 0, 4, 2)) == 0.0
    assert iou(B(0, 0, 2, 2), B(1, 0, 3, 2)) == pytest.approx(1 / 3)
    assert iou(B(1, 1, 1, 1), B(1, 1, 1, 1)) == 0.0


def test_iou_random_against_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = np.sort(rng.uniform(0, 10, size=(2, 2)), axis=0).T.ravel()[[0, 2, 1, 3]]
        b = np.sort(rng.uniform(0, 10, size=(2, 2)), axis=0).T.ravel()[[0, 2, 1, 3]]
        assert iou(B(*a), B(*b)) == pytest.approx(box_iou(a, b), abs=1e-12)


def test_perfect_predictions():
    gt = [B(0, 0, 10, 10), B(20, 20, 30, 30)]
    items = [EvalItem([ScoredBox(b, 1.0) for b in gt], gt)]
    assert map_at(items) == 1.0
    assert map_range(items) == 1.0
    assert f1_at(items, 0.5, 0.5) == 1.0


def test_ap_hand_example():
    gt = [B(0, 0, 10, 10), B(20, 0, 30, 10)]
    preds = [ScoredBox(B(0, 0, 10, 10), 0.9), ScoredBox(B(50, 50, 60, 60), 0.8), ScoredBox(B(20, 0, 30, 10), 0.7)]
    # P/R points: (1, .5), (.5, .5), (2/3, 1)
    assert map_at([EvalItem(preds, gt)]) == pytest.approx(0.5 * 1 + 0 + 0.5 * 2 / 3)


def test_duplicate_detection_is_false_positive():
    gt = [B(0, 0, 10, 10)]
    preds = [ScoredBox(B(0, 0, 10, 10), 0.9), ScoredBox(B(0, 0, 10, 10), 0.8)]
    p, r = precision_recall_at([EvalItem(preds, gt)], 0.5, 0.0)
    assert (p, r) == (0.5, 1.0)


def test_tied_scores_form_one_point():
    gt = [B(0, 0, 10, 10)]
    preds = [ScoredBox(B(50, 50, 60, 60), 0.5), ScoredBox(B(0, 0, 10, 10), 0.5)]
    curve = pr_curve([EvalItem(preds, gt)], 0.5)
    assert len(curve) == 1
    assert (curve[0].precision, curve[0].recall) == (0.5, 1.0)


def test_no_ground_truth():
    with pytest.raises(NoGroundTruth):
        map_at([EvalItem([ScoredBox(B(0, 0, 1, 1), 0.5)], [])])


def test_no_predictions_gives_zero():
    assert map_at([EvalItem([], [B(0, 0, 1, 1)])]) == 0.0


def random_items(rng, n_images=3):
    images = []
    for _ in range(n_images):
        n_gt = int(rng.integers(0, 5))
        gt = []
        for _ in range(n_gt):
            x, y = rng.uniform(0, 50, 2)
            gt.append((x, y, x + rng.uniform(5, 20), y + rng.uniform(5, 20)))
        preds = []
        for _ in range(int(rng.integers(0, 6))):
            if gt and rng.random() < 0.6:
                g = gt[int(rng.integers(len(gt)))]
                jitter = rng.normal(0, 2, 4)
                box = (g[0] + jitter[0], g[1] + jitter[1], g[2] + abs(jitter[2]) + 1, g[3] + abs(jitter[3]) + 1)
            else:
                x, y = rng.uniform(0, 50, 2)
                box = (x, y, x + rng.uniform(5, 20), y + rng.uniform(5, 20))
            preds.append((float(np.round(rng.uniform(0, 1), 1)), box))
        images.append((preds, gt))
    return images


def to_items(images):
    return [EvalItem([ScoredBox(B(*b), s) for s, b in preds], [B(*g) for g in gt]) for preds, gt in images]


def test_ap_matches_threshold_sweep():
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 100:
        images = random_items(rng)
        if not any(gt for _, gt in images):
            continue
        for thr in (0.5, 0.75):
            assert average_precision(to_items(images), thr) == pytest.approx(ap_threshold_sweep(images, thr), abs=1e-9)
        checked += 1


def test_per_image_mode():
    gt = [B(0, 0, 10, 10)]
    a = EvalItem([ScoredBox(B(0, 0, 10, 10), 0.9)], gt, "a")
    b = EvalItem([ScoredBox(B(40, 40, 50, 50), 0.95)], gt, "b")
    assert average_precision([a, b], 0.5, per_image=True) == 0.5
    # pooled: the 0.95 miss comes first -> points (0, 0), (0.5, 0.5)
    assert average_precision([a, b], 0.5) == 0.25


def test_map_range_is_mean():
    rng = np.random.default_rng(4)
    items = to_items(random_items(rng, 6))
    per = map_per_threshold(items)
    assert list(per) == list(IOU_RANGE)
    assert len(IOU_RANGE) == 10
    assert map_range(items) == sum(per.values()) / 10


def test_f1_score():
    assert f1_score(0.0, 0.0) == 0.0
    assert f1_score(0.5, 1.0) == pytest.approx(2 / 3)


def test_box_files_round_trip(tmp_path):
    det = [("img1", ScoredBox(B(1, 2, 3, 4), 0.5)), ("img2", ScoredBox(B(0, 0, 10.5, 3), 1.0))]
    gt = [("img1", B(1, 2, 3, 4)), ("img3", B(5, 5, 6, 6))]
    write_detections(tmp_path / "d.txt", det)
    write_ground_truth(tmp_path / "g.txt", gt)
    dets = read_detections(tmp_path / "d.txt")
    gts = read_ground_truth(tmp_path / "g.txt")
    assert dets["img2"][0].box == B(0, 0, 10.5, 3)
    items = build_eval_items(dets, gts)
    assert [it.image_id for it in items] == ["img1", "img3", "img2"]
    (tmp_path / "bad.txt").write_text("img 1 2 3\n")
    with pytest.raises(ValueError):
        read_ground_truth(tmp_path / "bad.txt")
