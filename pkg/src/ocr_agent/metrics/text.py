"""Edit distance and the short-answer VQA scorers."""

from __future__ import annotations

from typing import Mapping, Sequence

from ..errors import EmptyGoldError
from .base import MetricScore, normalize_text

VQA_METHODS = ("exact", "contains", "anls")
SHORT_ANSWER_TOKENS = 3


def levenshtein(a: str, b: str) -> int:
    """Unit-cost insert/delete/substitute distance over code points."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalized_similarity(a: str, b: str) -> float:
    """``1 - lev / max(len)``; two empty strings are identical (1.0)."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def _check_gold(gold_set: Sequence[str]) -> list[str]:
    if isinstance(gold_set, str):
        gold_set = [gold_set]
    gold = list(gold_set)
    if not gold:
        raise EmptyGoldError("gold answer set is empty")
    return gold


def anls(pred: str, gold_set: Sequence[str], tau: float = 0.5) -> MetricScore:
    """Thresholded normalized Levenshtein similarity, best over the gold set.

    Each gold answer's similarity is zeroed when it falls below ``tau``
    before the maximum is taken.
    """
    gold = _check_gold(gold_set)
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must lie in [0, 1), got {tau}")
    p = normalize_text(pred)
    best, best_gold, best_dist = 0.0, None, None
    for g in gold:
        gn = normalize_text(g)
        dist = levenshtein(p, gn)
        longest = max(len(p), len(gn))
        sim = 1.0 if longest == 0 else 1.0 - dist / longest
        if sim < tau:
            sim = 0.0
        if best_gold is None or sim > best:
            best, best_gold, best_dist = sim, g, dist
    return MetricScore(best, "anls", {"edit_distance": best_dist, "matched_gold": best_gold, "tau": tau})


def exact_match(pred: str, gold_set: Sequence[str]) -> MetricScore:
    gold = _check_gold(gold_set)
    p = normalize_text(pred)
    hit = next((g for g in gold if normalize_text(g) == p), None)
    return MetricScore(float(hit is not None), "exact", {"matched_gold": hit})


def contains_match(pred: str, gold_set: Sequence[str], *, enumerative: bool = False) -> MetricScore:
    """1.0 when a normalized gold answer occurs inside the normalized prediction.

    With ``enumerative`` the prediction may instead occur inside a gold
    answer (the gold lists several acceptable items).
    """
    gold = _check_gold(gold_set)
    p = normalize_text(pred)
    for g in gold:
        gn = normalize_text(g)
        if gn in p or (enumerative and p and p in gn):
            return MetricScore(1.0, "contains", {"matched_gold": g})
    return MetricScore(0.0, "contains", {"matched_gold": None})


def _directive_method(directive) -> tuple[str | None, dict]:
    if directive is None:
        return None, {}
    if isinstance(directive, str):
        return directive.lower(), {}
    if isinstance(directive, Mapping):
        method = directive.get("method")
        return (method.lower() if method else None), dict(directive)
    raise TypeError(f"unsupported eval directive {directive!r}")


def vqa_score(pred: str, gold_set: Sequence[str], directive=None, tau: float = 0.5) -> MetricScore:
    """Route a short-form answer to exact match, containment or ANLS.

    An explicit directive (``"exact"``, ``"contains"``, ``"anls"`` or a
    mapping with a ``method`` key) wins. Otherwise gold answers of at most
    three whitespace tokens are compared exactly and longer ones with ANLS.
    """
    gold = _check_gold(gold_set)
    method, detail = _directive_method(directive)
    routed_by = "directive"
    if method is None:
        longest = max(len(normalize_text(g).split()) for g in gold)
        method = "exact" if longest <= SHORT_ANSWER_TOKENS else "anls"
        routed_by = "length"
    if method == "exact":
        score = exact_match(pred, gold)
    elif method == "contains":
        score = contains_match(pred, gold, enumerative=bool(detail.get("enumerative")))
    elif method == "anls":
        score = anls(pred, gold, float(detail.get("tau", tau)))
    else:
        raise ValueError(f"unknown vqa method {method!r}; expected one of {VQA_METHODS}")
    diag = dict(score.diagnostics, method=method, routed_by=routed_by)
    return MetricScore(score.value, "vqa", diag)
