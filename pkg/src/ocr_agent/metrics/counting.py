from __future__ import annotations

from typing import Sequence

from ..errors import LengthMismatchError
from .base import MetricScore


def counting_score(pred_counts: Sequence[int], gold_counts: Sequence[int]) -> MetricScore:
    """Mean over items of ``max(0, 1 - |p - g| / max(g, 1))``."""
    if len(pred_counts) != len(gold_counts):
        raise LengthMismatchError(f"{len(pred_counts)} predicted counts for {len(gold_counts)} gold counts")
    if not gold_counts:
        raise LengthMismatchError("no counts to compare")
    per_item = []
    for p, g in zip(pred_counts, gold_counts):
        if p < 0 or g < 0:
            raise ValueError("counts must be non-negative")
        per_item.append(max(0.0, 1.0 - abs(p - g) / max(g, 1)))
    return MetricScore(sum(per_item) / len(per_item), "counting", {"per_item": per_item})
