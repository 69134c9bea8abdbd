from __future__ import annotations

from collections import Counter
from typing import Mapping, Sequence

from .base import MetricScore, normalize_text

KeyValueSet = Mapping[str, Sequence[str]]


def _pairs(kv: KeyValueSet) -> Counter:
    out: Counter = Counter()
    for key, values in kv.items():
        if isinstance(values, str):
            values = [values]
        for v in values:
            out[(key.strip(), normalize_text(str(v)))] += 1
    return out


def extraction_f1(pred: KeyValueSet, gold: KeyValueSet) -> MetricScore:
    """F1 over (field, value) pairs; field names must match, values after normalization."""
    p, g = _pairs(pred), _pairs(gold)
    tp = sum((p & g).values())
    n_pred, n_gold = sum(p.values()), sum(g.values())
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 0.0 if tp == 0 else 2 * precision * recall / (precision + recall)
    return MetricScore(f1, "extraction_f1", {
        "precision": precision, "recall": recall, "tp": tp, "pred_pairs": n_pred, "gold_pairs": n_gold,
    })
