from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .base import MetricScore


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box {self}")

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> BoundingBox:
        """Build a box from two opposite corners given in any order."""
        return cls(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def _intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    return max(0.0, w) * max(0.0, h)


def iou(a: BoundingBox, b: BoundingBox) -> MetricScore:
    inter = _intersection_area(a, b)
    union = a.area + b.area - inter
    value = inter / union if union > 0 else 0.0
    return MetricScore(value, "iou", {"intersection": inter, "union": union})


def best_iou(pred: BoundingBox, gold_boxes: Sequence[BoundingBox]) -> MetricScore:
    if not gold_boxes:
        return MetricScore(0.0, "iou", {"reason": "no gold boxes"})
    scores = [iou(pred, g) for g in gold_boxes]
    k = max(range(len(scores)), key=lambda i: scores[i].value)
    return MetricScore(scores[k].value, "iou", dict(scores[k].diagnostics, matched_gold=k))


def spotting_score(pred_items, gold_items, *, iou_threshold: float = 0.5, text_scorer=None) -> MetricScore:
    """Score predicted ``(text, box)`` items against gold ``(text, box)`` items.

    Gold items are visited in order; each takes the unused prediction with
    the highest IoU. A pair counts only if that IoU reaches
    ``iou_threshold``, and it then earns the transcription score of its text.
    The sum is divided by ``max(len(gold), len(pred))`` so spurious
    predictions cost as much as missed ones.
    """
    from .text import vqa_score

    text_scorer = text_scorer or (lambda p, g: vqa_score(p, [g]).value)
    pred_items = list(pred_items)
    gold_items = list(gold_items)
    denom = max(len(gold_items), len(pred_items))
    if denom == 0:
        return MetricScore(1.0, "spotting", {"matched": 0})
    used: set[int] = set()
    total = 0.0
    matched = 0
    for g_text, g_box in gold_items:
        best_k, best_v = None, 0.0
        for k, (_, p_box) in enumerate(pred_items):
            if k in used:
                continue
            v = iou(p_box, g_box).value
            if best_k is None or v > best_v:
                best_k, best_v = k, v
        if best_k is not None and best_v >= iou_threshold:
            used.add(best_k)
            matched += 1
            total += text_scorer(pred_items[best_k][0], g_text)
    return MetricScore(total / denom, "spotting", {"matched": matched, "gold": len(gold_items), "pred": len(pred_items)})
