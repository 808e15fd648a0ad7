"""
Segmentation and Grounding Metrics.

    - iou:        |a & b| / |a | b| for one pair (empty vs empty = 1)
    - ciou:       cumulative intersection over cumulative union
    - giou:       mean per-sample IoU; a no-target sample scores 1 when the
                  prediction is empty and 0 otherwise
    - miou:       mean per-sample IoU over targeted samples
    - acc_at_05:  fraction of box pairs with box IoU >= 0.5
    - semantic_miou: class IoU from a confusion matrix keyed by label text

Boxes are inclusive ``BoxBins``; a box covers (x2-x1+1)*(y2-y1+1) cells.

``MetricAccumulator`` keeps partial sums only, so accumulators built over
shards of a corpus merge with ``+`` into the same result as one pass.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .bsd_codec import rasterize
from .diagnostics import MaskFormatError, ParseMode
from .labels import BACKGROUND_ID
from .raster import BinaryGrid, BoxBins, LabelGrid, tight_box
from .response_grammar import (
    TaskKind, expectation_from_meta, parse_response, response_text,
)


logger = logging.getLogger(__name__)

ACC_THRESHOLD = 0.5

CONVENTIONS = {
    "empty_vs_empty_iou": 1.0,
    "no_target_empty_prediction_giou": 1.0,
    "no_target_nonempty_prediction_giou": 0.0,
    "targeted_empty_prediction_giou": 0.0,
}


# ============================================================================
# Pairwise
# ============================================================================

def _check_dims(a: BinaryGrid, b: BinaryGrid) -> None:
    if (a.rows, a.cols) != (b.rows, b.cols):
        raise ValueError(f"Mask dimensions differ: {a.rows}x{a.cols} vs {b.rows}x{b.cols}")


def intersection_union(a: Optional[BinaryGrid], b: Optional[BinaryGrid]) -> Tuple[int, int]:
    """Cell counts of ``a & b`` and ``a | b``; ``None`` is an empty mask."""
    if a is None and b is None:
        return 0, 0
    if a is None:
        return 0, b.area
    if b is None:
        return 0, a.area
    _check_dims(a, b)
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    return inter, union


def iou(a: BinaryGrid, b: BinaryGrid) -> float:
    """
    Intersection over union of two same-size masks.

    Examples:
        >>> g = BinaryGrid(np.ones((2, 2)))
        >>> iou(g, g)
        1.0
    """
    _check_dims(a, b)
    inter, union = intersection_union(a, b)
    return 1.0 if union == 0 else inter / union


def box_iou(a: BoxBins, b: BoxBins) -> float:
    ix = min(a.x2, b.x2) - max(a.x1, b.x1) + 1
    iy = min(a.y2, b.y2) - max(a.y1, b.y1) + 1
    inter = max(ix, 0) * max(iy, 0)
    return inter / (a.area + b.area - inter)


# ============================================================================
# Pairs
# ============================================================================

@dataclass(frozen=True)
class EvalPair:
    """
    One aligned prediction / ground truth.

    ``None`` (or an all-zero grid) is an empty mask; an empty ground truth
    marks a no-target sample.
    """
    prediction: Optional[BinaryGrid]
    ground_truth: Optional[BinaryGrid]
    pred_box: Optional[BoxBins] = None
    gt_box: Optional[BoxBins] = None
    sample_id: Optional[str] = None

    def __post_init__(self):
        if self.prediction is not None and self.ground_truth is not None:
            _check_dims(self.prediction, self.ground_truth)

    @property
    def no_target(self) -> bool:
        return self.ground_truth is None or self.ground_truth.is_empty()

    @property
    def prediction_empty(self) -> bool:
        return self.prediction is None or self.prediction.is_empty()

    def iou(self) -> float:
        inter, union = intersection_union(self.prediction, self.ground_truth)
        return 1.0 if union == 0 else inter / union

    def giou_score(self) -> float:
        if self.no_target:
            return 1.0 if self.prediction_empty else 0.0
        return self.iou()

    def boxes(self) -> Tuple[Optional[BoxBins], Optional[BoxBins]]:
        """Given boxes, or tight boxes derived from the masks."""
        pred = self.pred_box
        if pred is None and self.prediction is not None:
            pred = tight_box(self.prediction)
        gt = self.gt_box
        if gt is None and self.ground_truth is not None:
            gt = tight_box(self.ground_truth)
        return pred, gt


def _require(pairs: Sequence[EvalPair]) -> Sequence[EvalPair]:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("Metric needs at least one pair")
    return pairs


def ciou(pairs: Iterable[EvalPair]) -> float:
    """Sum of intersections over sum of unions; 1.0 when every union is empty."""
    pairs = _require(pairs)
    sums = np.array([intersection_union(p.prediction, p.ground_truth) for p in pairs]).sum(axis=0)
    return 1.0 if sums[1] == 0 else float(sums[0] / sums[1])


def giou(pairs: Iterable[EvalPair]) -> float:
    pairs = _require(pairs)
    return float(np.mean([p.giou_score() for p in pairs]))


def miou(pairs: Iterable[EvalPair]) -> float:
    """Mean IoU over targeted pairs; raises when every pair is no-target."""
    targeted = [p for p in _require(pairs) if not p.no_target]
    if not targeted:
        raise ValueError("mIoU needs at least one targeted pair")
    return float(np.mean([p.iou() for p in targeted]))


def acc_at_05(pred_boxes: Sequence[Optional[BoxBins]], gt_boxes: Sequence[BoxBins]) -> float:
    """Fraction of aligned box pairs with IoU >= 0.5; a missing prediction is a miss."""
    if len(pred_boxes) != len(gt_boxes):
        raise ValueError(f"Box lists differ in length: {len(pred_boxes)} vs {len(gt_boxes)}")
    if not gt_boxes:
        raise ValueError("Acc@0.5 needs at least one box pair")
    hits = sum(
        1 for p, g in zip(pred_boxes, gt_boxes)
        if p is not None and box_iou(p, g) >= ACC_THRESHOLD
    )
    return hits / len(gt_boxes)


# ============================================================================
# Semantic mIoU
# ============================================================================

class SemanticIoU(NamedTuple):
    per_class: Dict[str, float]
    mean: Optional[float]


def semantic_miou(pairs: Iterable[Tuple[LabelGrid, LabelGrid]],
                  include_background: bool = False) -> SemanticIoU:
    """
    Class IoU over (prediction, ground truth) label grids.

    Labels are matched by text, so the two grids may use different tables.
    Classes with an empty union in every pair are left out.
    """
    pairs = list(pairs)
    vocab = sorted({
        label for pred, gt in pairs for label in pred.table.labels + gt.table.labels
    })
    index = {label: i for i, label in enumerate(vocab)}
    k = len(vocab)
    confusion = np.zeros((k, k), dtype=np.int64)

    def remap(grid: LabelGrid) -> np.ndarray:
        lut = np.zeros(max(grid.table.ids) + 1, dtype=np.int64)
        for label_id, label in grid.table.entries:
            lut[label_id] = index[label]
        return lut[grid.cells].ravel()

    for pred, gt in pairs:
        if (pred.rows, pred.cols) != (gt.rows, gt.cols):
            raise ValueError(f"Grid dimensions differ: {pred.rows}x{pred.cols} vs {gt.rows}x{gt.cols}")
        confusion += np.bincount(remap(gt) * k + remap(pred), minlength=k * k).reshape(k, k)

    backgrounds = {gt.table.background for _, gt in pairs} | {p.table.background for p, _ in pairs}
    per_class = {}
    for label, i in index.items():
        if not include_background and label in backgrounds:
            continue
        union = confusion[i, :].sum() + confusion[:, i].sum() - confusion[i, i]
        if union > 0:
            per_class[label] = float(confusion[i, i] / union)
    mean = float(np.mean(list(per_class.values()))) if per_class else None
    return SemanticIoU(per_class, mean)


# ============================================================================
# Accumulation and Reports
# ============================================================================

@dataclass
class MetricAccumulator:
    """Commutative partial sums behind every corpus metric."""
    samples: int = 0
    intersection: int = 0
    union: int = 0
    giou_sum: float = 0.0
    targeted: int = 0
    miou_sum: float = 0.0
    no_target_tp: int = 0
    no_target_fn: int = 0
    box_pairs: int = 0
    box_hits: int = 0
    per_sample: List[Dict[str, Any]] = field(default_factory=list)

    def add(self, pair: EvalPair, keep_sample: bool = False) -> None:
        inter, union = intersection_union(pair.prediction, pair.ground_truth)
        score = pair.giou_score()
        self.samples += 1
        self.intersection += inter
        self.union += union
        self.giou_sum += score
        if pair.no_target:
            if pair.prediction_empty:
                self.no_target_tp += 1
            else:
                self.no_target_fn += 1
        else:
            self.targeted += 1
            self.miou_sum += pair.iou()
            pred_box, gt_box = pair.boxes()
            self.box_pairs += 1
            if pred_box is not None and box_iou(pred_box, gt_box) >= ACC_THRESHOLD:
                self.box_hits += 1
        if keep_sample:
            self.per_sample.append({
                "id": pair.sample_id,
                "iou": pair.iou(),
                "giou": score,
                "no_target": pair.no_target,
            })

    def __add__(self, other: "MetricAccumulator") -> "MetricAccumulator":
        return MetricAccumulator(
            samples=self.samples + other.samples,
            intersection=self.intersection + other.intersection,
            union=self.union + other.union,
            giou_sum=self.giou_sum + other.giou_sum,
            targeted=self.targeted + other.targeted,
            miou_sum=self.miou_sum + other.miou_sum,
            no_target_tp=self.no_target_tp + other.no_target_tp,
            no_target_fn=self.no_target_fn + other.no_target_fn,
            box_pairs=self.box_pairs + other.box_pairs,
            box_hits=self.box_hits + other.box_hits,
            per_sample=self.per_sample + other.per_sample,
        )

    def report(self) -> "EvalReport":
        if self.samples == 0:
            raise ValueError("No samples were accumulated")
        return EvalReport(
            samples=self.samples,
            ciou=1.0 if self.union == 0 else self.intersection / self.union,
            giou=self.giou_sum / self.samples,
            miou=self.miou_sum / self.targeted if self.targeted else None,
            acc_at_05=self.box_hits / self.box_pairs if self.box_pairs else None,
            targeted=self.targeted,
            no_target_tp=self.no_target_tp,
            no_target_fn=self.no_target_fn,
            per_sample=list(self.per_sample),
        )


@dataclass
class EvalReport:
    samples: int
    ciou: float
    giou: float
    miou: Optional[float]
    acc_at_05: Optional[float]
    targeted: int
    no_target_tp: int
    no_target_fn: int
    per_sample: List[Dict[str, Any]] = field(default_factory=list)
    semantic: Optional[SemanticIoU] = None

    def summary(self) -> Dict[str, Any]:
        out = {
            "samples": self.samples,
            "ciou": self.ciou,
            "giou": self.giou,
            "miou": self.miou,
            "acc_at_05": self.acc_at_05,
            "targeted": self.targeted,
            "no_target_tp": self.no_target_tp,
            "no_target_fn": self.no_target_fn,
        }
        if self.semantic is not None:
            out["semantic_miou"] = self.semantic.mean
        return out

    def to_dict(self, per_sample: bool = False) -> Dict[str, Any]:
        out = self.summary()
        if self.semantic is not None:
            out["semantic_class_iou"] = dict(sorted(self.semantic.per_class.items()))
        out["conventions"] = dict(CONVENTIONS)
        if per_sample:
            out["per_sample"] = self.per_sample
        return out

    def write_json(self, path: Union[str, Path], per_sample: bool = False) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(per_sample), f, indent=2, ensure_ascii=False)
            f.write("\n")

    def write_csv(self, path: Union[str, Path]) -> None:
        summary = self.summary()
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(summary))
            writer.writeheader()
            writer.writerow({k: "" if v is None else v for k, v in summary.items()})


def evaluate(pairs: Iterable[EvalPair], per_sample: bool = False,
             semantic_pairs: Sequence[Tuple[LabelGrid, LabelGrid]] = ()) -> EvalReport:
    """
    Score aligned pairs.

    Prediction boxes default to the tight box of the predicted mask; the
    same holds for ground truth.
    """
    acc = MetricAccumulator()
    for pair in pairs:
        acc.add(pair, keep_sample=per_sample)
    report = acc.report()
    if semantic_pairs:
        report.semantic = semantic_miou(semantic_pairs)
    return report


# ============================================================================
# Corpus Loading
# ============================================================================

class LoadedSample(NamedTuple):
    foreground: BinaryGrid
    box: Optional[BoxBins]
    grid: Optional[LabelGrid]


def _union_box(boxes: List[BoxBins]) -> Optional[BoxBins]:
    if not boxes:
        return None
    return BoxBins(min(b.x1 for b in boxes), min(b.y1 for b in boxes),
                   max(b.x2 for b in boxes), max(b.y2 for b in boxes))


def sample_mask(text: str, meta: Dict[str, Any],
                mode: Union[ParseMode, str] = ParseMode.LENIENT) -> LoadedSample:
    """
    Foreground mask of one response: every non-background cell for I-SD,
    every record's pixels for B-SD.
    """
    expected = expectation_from_meta(meta)
    parsed = parse_response(text, expected, mode)
    if parsed.task_kind is TaskKind.ISD:
        fg = BinaryGrid(parsed.grid.cells != BACKGROUND_ID)
        return LoadedSample(fg, None, parsed.grid)
    merged = rasterize(parsed.records, expected.canvas_res).merged
    box = _union_box([r.box for r in parsed.records if r.box is not None])
    return LoadedSample(BinaryGrid(merged.cells != BACKGROUND_ID), box, None)


def _read_jsonl(path: Union[str, Path]) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def load_eval_pairs(predictions: Union[str, Path], references: Union[str, Path],
                    field_name: str = "response") -> Tuple[List[EvalPair], List[Tuple[LabelGrid, LabelGrid]]]:
    """
    Align a prediction JSONL with a reference instruction corpus by ``id``.

    References parse strictly; predictions parse leniently under the
    reference's ``meta``. A missing or unparsable prediction counts as an
    empty mask. Semantic-task I-SD samples also yield label-grid pairs.
    """
    preds = {str(r.get("id")): r for r in _read_jsonl(predictions)}
    pairs: List[EvalPair] = []
    semantic: List[Tuple[LabelGrid, LabelGrid]] = []
    for ref in _read_jsonl(references):
        sample_id = str(ref.get("id"))
        meta = ref.get("meta") or {}
        gt = sample_mask(response_text(ref, field_name) or "", meta, ParseMode.STRICT)

        pred_record = preds.get(sample_id)
        text = None if pred_record is None else response_text(pred_record, field_name)
        pred: Optional[LoadedSample] = None
        if text is None:
            logger.warning("no prediction for sample %s", sample_id)
        else:
            try:
                pred = sample_mask(text, meta, ParseMode.LENIENT)
            except (MaskFormatError, ValueError) as e:
                logger.warning("prediction for sample %s unusable: %s", sample_id, e)

        pairs.append(EvalPair(
            prediction=None if pred is None else pred.foreground,
            ground_truth=gt.foreground,
            pred_box=None if pred is None else pred.box,
            gt_box=gt.box,
            sample_id=sample_id,
        ))
        if meta.get("task") == "semantic" and gt.grid is not None:
            pred_grid = pred.grid if pred is not None and pred.grid is not None \
                else LabelGrid.filled(gt.grid.rows, gt.grid.cols, gt.grid.table)
            semantic.append((pred_grid, gt.grid))
    return pairs, semantic
