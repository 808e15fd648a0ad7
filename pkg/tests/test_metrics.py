"""
Unit tests for segmentation and grounding metrics.
"""

import csv
import json

import numpy as np
import pytest

from textmask import (
    BinaryGrid, BoxBins, EvalPair, LabelGrid, LabelTable,
    acc_at_05, box_iou, ciou, evaluate, giou, iou, miou, semantic_miou,
)
from textmask.metrics import MetricAccumulator, load_eval_pairs


def bits(rows):
    return BinaryGrid(np.array(rows, dtype=np.uint8))


def grid_from_int(value):
    return BinaryGrid(np.array([(value >> i) & 1 for i in range(9)], dtype=np.uint8).reshape(3, 3))


# ============================================================================
# IoU
# ============================================================================

def test_iou_basics():
    """Identical -> 1, disjoint -> 0, empty vs empty -> 1."""
    a = bits([[1, 0], [0, 0]])
    b = bits([[0, 1], [0, 0]])

    assert iou(a, a) == 1.0
    assert iou(a, b) == 0.0
    assert iou(BinaryGrid.zeros(2, 2), BinaryGrid.zeros(2, 2)) == 1.0


def test_iou_rejects_dimension_mismatch():
    """Masks must share dimensions."""
    with pytest.raises(ValueError):
        iou(BinaryGrid.zeros(2, 2), BinaryGrid.zeros(3, 3))


def test_iou_exhaustive_3x3():
    """Every ordered pair of 3x3 masks matches the bit-count definition."""
    grids = [grid_from_int(v) for v in range(512)]
    for a in range(512):
        for b in range(512):
            union = bin(a | b).count("1")
            expected = 1.0 if union == 0 else bin(a & b).count("1") / union
            assert iou(grids[a], grids[b]) == expected


def test_box_iou_matches_cell_count(rng):
    """Inclusive box IoU equals the rasterized overlap on a 64x64 canvas."""
    for _ in range(500):
        boxes = []
        canvases = []
        for _ in range(2):
            x1, x2 = sorted(int(v) for v in rng.integers(0, 64, size=2))
            y1, y2 = sorted(int(v) for v in rng.integers(0, 64, size=2))
            canvas = np.zeros((64, 64), dtype=bool)
            canvas[y1:y2 + 1, x1:x2 + 1] = True
            boxes.append(BoxBins(x1, y1, x2, y2))
            canvases.append(canvas)
        expected = (canvases[0] & canvases[1]).sum() / (canvases[0] | canvases[1]).sum()
        assert box_iou(*boxes) == pytest.approx(expected)
        assert box_iou(*boxes) == box_iou(*reversed(boxes))


# ============================================================================
# Corpus Metrics
# ============================================================================

def test_ciou_sums_before_dividing():
    """(I=1, U=2) and (I=0, U=2) -> 0.25."""
    pairs = [
        EvalPair(bits([[1, 1]]), bits([[1, 0]])),
        EvalPair(bits([[1, 0]]), bits([[0, 1]])),
    ]

    assert ciou(pairs) == 0.25


def test_ciou_no_target_pairs_contribute_nothing():
    """Empty pairs add zero to both sums."""
    pairs = [EvalPair(bits([[1, 1]]), bits([[1, 0]])), EvalPair(None, None)]

    assert ciou(pairs) == 0.5
    assert ciou([EvalPair(None, None)]) == 1.0


def test_giou_no_target_convention():
    """Correct empty -> 1; false negative -> 0."""
    hit = EvalPair(BinaryGrid.zeros(1, 2), BinaryGrid.zeros(1, 2))
    miss = EvalPair(bits([[1, 0]]), None)
    half = EvalPair(bits([[1, 1]]), bits([[1, 0]]))

    assert giou([hit, hit]) == 1.0
    assert giou([half, miss]) == 0.25


def test_giou_equals_miou_without_no_target(rng):
    """With only targeted pairs gIoU and mIoU coincide."""
    pairs = []
    for _ in range(50):
        gt = rng.integers(0, 2, size=(4, 4))
        gt[0, 0] = 1
        pairs.append(EvalPair(BinaryGrid(rng.integers(0, 2, size=(4, 4))), BinaryGrid(gt)))

    assert giou(pairs) == pytest.approx(miou(pairs))
    assert miou(pairs) == pytest.approx(np.mean([p.iou() for p in pairs]))


def test_miou():
    """{1.0, 0.0} -> 0.5; no targeted pairs raises."""
    pairs = [EvalPair(bits([[1]]), bits([[1]])), EvalPair(bits([[0, 1]]), bits([[1, 0]]))]

    assert miou(pairs) == 0.5
    with pytest.raises(ValueError):
        miou([EvalPair(None, None)])


def test_targeted_empty_prediction_scores_zero():
    """An empty prediction for a real target scores 0."""
    pair = EvalPair(None, bits([[1, 0]]))

    assert giou([pair]) == 0.0
    assert miou([pair]) == 0.0


def test_metrics_reject_empty_input():
    """Corpus metrics need at least one pair."""
    for metric in (ciou, giou, miou):
        with pytest.raises(ValueError):
            metric([])


def test_acc_at_05():
    """Fraction of box pairs at IoU >= 0.5; a missing box is a miss."""
    box = BoxBins(0, 0, 3, 3)

    assert acc_at_05([box], [box]) == 1.0
    assert acc_at_05([BoxBins(0, 0, 0, 0)], [BoxBins(5, 5, 5, 5)]) == 0.0
    assert acc_at_05([BoxBins(0, 0, 1, 3), None], [box, box]) == 0.5
    with pytest.raises(ValueError):
        acc_at_05([box], [])


def test_semantic_miou_matches_by_label_text():
    """Class IoU pairs labels by text across tables."""
    gt = LabelGrid(np.array([[1, 1], [2, 2]]), LabelTable.from_labels(["sky", "sand"]))
    pred = LabelGrid(np.array([[2, 2], [2, 1]]), LabelTable.from_labels(["sand", "sky"]))

    result = semantic_miou([(pred, gt)])

    assert result.per_class == pytest.approx({"sky": 2 / 3, "sand": 1 / 2})
    assert result.mean == pytest.approx(7 / 12)


# ============================================================================
# Accumulation and Reports
# ============================================================================

def random_pairs(rng, n):
    pairs = []
    for _ in range(n):
        gt = None if rng.random() < 0.2 else BinaryGrid(rng.integers(0, 2, size=(5, 5)))
        pairs.append(EvalPair(BinaryGrid(rng.integers(0, 2, size=(5, 5))), gt))
    return pairs


def test_accumulators_merge(rng):
    """Shard accumulators summed with + report the same as one pass."""
    pairs = random_pairs(rng, 60)
    left, right, whole = MetricAccumulator(), MetricAccumulator(), MetricAccumulator()
    for i, pair in enumerate(pairs):
        (left if i % 3 else right).add(pair)
        whole.add(pair)

    merged = (left + right).report().summary()

    assert merged == pytest.approx(whole.report().summary())
    assert merged["ciou"] == pytest.approx(ciou(pairs))
    assert merged["giou"] == pytest.approx(giou(pairs))


def test_evaluate_report_files(tmp_path, rng):
    """Reports carry conventions and per-sample rows; CSV holds the summary."""
    report = evaluate(random_pairs(rng, 10), per_sample=True)

    report.write_json(tmp_path / "r.json", per_sample=True)
    report.write_csv(tmp_path / "r.csv")

    data = json.loads((tmp_path / "r.json").read_text(encoding="utf-8"))
    assert len(data["per_sample"]) == 10
    assert data["conventions"]["no_target_nonempty_prediction_giou"] == 0.0
    with open(tmp_path / "r.csv", newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert rows[0]["samples"] == "10"
    for key in ("ciou", "giou"):
        assert 0.0 <= data[key] <= 1.0


def test_evaluate_rejects_empty():
    """No pairs, no report."""
    with pytest.raises(ValueError):
        evaluate([])


# ============================================================================
# Corpus Loading
# ============================================================================

REFERENCES = [
    {"id": "a", "conversations": [{"from": "human", "value": "q"},
                                  {"from": "gpt", "value": "The result is: \n<seg>dog*2\nothers*2</seg>"}],
     "meta": {"task": "referring", "format": "isd-rrle", "resolution": 2, "labels": ["dog"]}},
    {"id": "b", "conversations": [{"from": "gpt", "value": "<ref>cat</ref><box>[[0 0 1 0]]</box><seg>fg2</seg>"}],
     "meta": {"task": "referring", "format": "bsd", "resolution": 4}},
    {"id": "c", "conversations": [{"from": "gpt", "value": "<ref>x</ref><box>[[]]</box><seg></seg>"}],
     "meta": {"task": "generalized_referring", "format": "bsd", "resolution": 4}},
]


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


def test_perfect_predictions_score_one(tmp_path):
    """Predictions equal to the references score 1 everywhere."""
    write_jsonl(tmp_path / "ref.jsonl", REFERENCES)
    write_jsonl(tmp_path / "pred.jsonl", [
        {"id": "a", "response": "<seg>dog*2\nothers*2</seg>"},
        {"id": "b", "response": "Sure. <ref>cat</ref><box>[[0 0 1 0]]</box><seg>fg2</seg>"},
    ])

    pairs, semantic = load_eval_pairs(tmp_path / "pred.jsonl", tmp_path / "ref.jsonl")
    report = evaluate(pairs, semantic_pairs=semantic)

    assert [p.sample_id for p in pairs] == ["a", "b", "c"]
    assert semantic == []
    assert report.summary() == {
        "samples": 3, "ciou": 1.0, "giou": 1.0, "miou": 1.0, "acc_at_05": 1.0,
        "targeted": 2, "no_target_tp": 1, "no_target_fn": 0,
    }


def test_imperfect_and_broken_predictions(tmp_path):
    """Half overlaps score 0.5; garbage counts as an empty mask."""
    write_jsonl(tmp_path / "ref.jsonl", REFERENCES)
    write_jsonl(tmp_path / "pred.jsonl", [
        {"id": "a", "response": "<seg>dog|others\nothers*2</seg>"},
        {"id": "b", "response": "I don't know"},
        {"id": "c", "response": "<ref>x</ref><box>[[0 0 0 0]]</box><seg>fg1</seg>"},
    ])

    pairs, _ = load_eval_pairs(tmp_path / "pred.jsonl", tmp_path / "ref.jsonl")
    report = evaluate(pairs)

    assert [p.iou() for p in pairs[:2]] == [0.5, 0.0]
    assert report.giou == pytest.approx(0.5 / 3)
    assert (report.no_target_tp, report.no_target_fn) == (0, 1)
