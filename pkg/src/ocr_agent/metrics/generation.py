"""Long-form text metrics: BLEU, a unigram METEOR variant, token F1 and their composite."""

from __future__ import annotations

import math
import re
import unicodedata
from collections import Counter

from .base import MetricScore, normalize_text
from .text import normalized_similarity

# CJK ideographs and kana are one token each; everything else splits on
# whitespace and punctuation.
_CJK = "\u3040-\u30ff\u3400-\u4dbf\u4e00-\u9fff\uf900-\ufaff"
_TOKEN = re.compile(rf"[{_CJK}]|[^\W_{_CJK}]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(unicodedata.normalize("NFKC", text).casefold())


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(pred: str, ref: str, max_n: int = 4) -> MetricScore:
    """Sentence BLEU with add-one smoothing for orders that have no match."""
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    p_tok, r_tok = tokenize(pred), tokenize(ref)
    if not p_tok:
        return MetricScore(0.0, "bleu", {"precisions": [], "brevity_penalty": 0.0})
    precisions = []
    for n in range(1, max_n + 1):
        p_ng = _ngrams(p_tok, n)
        r_ng = _ngrams(r_tok, n)
        total = sum(p_ng.values())
        clipped = sum(min(c, r_ng[g]) for g, c in p_ng.items())
        precisions.append(clipped / total if clipped else 1.0 / (total + 1))
    bp = min(1.0, math.exp(1.0 - len(r_tok) / len(p_tok)))
    value = bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    return MetricScore(value, "bleu", {"precisions": precisions, "brevity_penalty": bp})


def _align(p_tok: list[str], r_tok: list[str]) -> list[tuple[int, int]]:
    """Greedy one-to-one exact alignment: each prediction token takes the first free equal reference token."""
    free: dict[str, list[int]] = {}
    for j, t in enumerate(r_tok):
        free.setdefault(t, []).append(j)
    pairs = []
    for i, t in enumerate(p_tok):
        slots = free.get(t)
        if slots:
            pairs.append((i, slots.pop(0)))
    return pairs


def _chunks(pairs: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_lite(pred: str, ref: str) -> MetricScore:
    """METEOR restricted to exact unigram matches (no stemming or synonyms)."""
    p_tok, r_tok = tokenize(pred), tokenize(ref)
    pairs = _align(p_tok, r_tok)
    m = len(pairs)
    if m == 0:
        return MetricScore(0.0, "meteor_lite", {"matches": 0, "chunks": 0})
    precision, recall = m / len(p_tok), m / len(r_tok)
    f_mean = 10 * precision * recall / (recall + 9 * precision)
    chunks = _chunks(pairs)
    penalty = 0.5 * (chunks / m) ** 3
    return MetricScore(f_mean * (1 - penalty), "meteor_lite", {
        "matches": m, "chunks": chunks, "precision": precision, "recall": recall,
        "f_mean": f_mean, "penalty": penalty,
    })


def token_f1(pred: str, ref: str) -> MetricScore:
    p, r = Counter(tokenize(pred)), Counter(tokenize(ref))
    overlap = sum((p & r).values())
    if overlap == 0:
        return MetricScore(0.0, "token_f1", {"overlap": 0})
    precision, recall = overlap / sum(p.values()), overlap / sum(r.values())
    return MetricScore(2 * precision * recall / (precision + recall), "token_f1",
                       {"overlap": overlap, "precision": precision, "recall": recall})


def edit_similarity(pred: str, ref: str) -> MetricScore:
    return MetricScore(normalized_similarity(normalize_text(pred), normalize_text(ref)), "edit_similarity")


def long_reading_score(pred: str, gold: str) -> MetricScore:
    """Unweighted mean of BLEU, METEOR-lite, token F1 and edit similarity."""
    if not normalize_text(pred):
        comps = {"bleu": 0.0, "meteor_lite": 0.0, "token_f1": 0.0, "edit_similarity": 0.0}
    else:
        comps = {
            "bleu": bleu(pred, gold).value,
            "meteor_lite": meteor_lite(pred, gold).value,
            "token_f1": token_f1(pred, gold).value,
            "edit_similarity": edit_similarity(pred, gold).value,
        }
    return MetricScore(sum(comps.values()) / 4, "long_reading", comps)
