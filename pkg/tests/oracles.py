"""Independent reference implementations used only by the tests.

These are deliberately naive: exhaustive recursion or enumeration that is
easy to check by eye, so disagreement points at the production code.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from functools import lru_cache


# -- edit distance -------------------------------------------------------------


def levenshtein_oracle_table(alphabet: str, max_len: int) -> dict[tuple[str, str], int]:
    """Edit distance for every pair of strings up to ``max_len`` over ``alphabet``.

    Uses the textbook recursion on suffixes with one shared memo, so every
    pair is computed from the three-way definition
    d(a, b) = min(d(a[1:], b) + 1, d(a, b[1:]) + 1, d(a[1:], b[1:]) + [a0 != b0]).
    """
    words = [""]
    for n in range(1, max_len + 1):
        words.extend("".join(p) for p in itertools.product(alphabet, repeat=n))

    @lru_cache(maxsize=None)
    def d(a: str, b: str) -> int:
        if not a:
            return len(b)
        if not b:
            return len(a)
        return min(d(a[1:], b) + 1, d(a, b[1:]) + 1, d(a[1:], b[1:]) + (a[0] != b[0]))

    # fill shorter suffixes first so the recursion depth stays small
    words.sort(key=len)
    table = {}
    for a in words:
        for b in words:
            table[(a, b)] = d(a, b)
    return table


# -- ordered tree edit distance by brute force -----------------------------------


def _preorder(tree) -> list:
    """Flatten ``(label, [children])`` into preorder nodes with parent/ancestry info."""
    nodes = []

    def walk(t, parent):
        idx = len(nodes)
        nodes.append({"label": t[0], "parent": parent})
        for c in t[1]:
            walk(c, idx)
        nodes[idx]["end"] = len(nodes)  # subtree is [idx, end)

    walk(tree, None)
    return nodes


def _is_ancestor(nodes, a, b) -> bool:
    return a < b < nodes[a]["end"]


def tree_edit_distance_oracle(t1, t2) -> int:
    """Minimum unit-cost edit script via enumeration of all valid mappings.

    A mapping is a set of node pairs that is one-to-one and preserves both
    ancestry and left-to-right order. Its cost is
    (#relabelled pairs) + (#unmapped in t1) + (#unmapped in t2),
    and the edit distance is the minimum over all valid mappings.
    """
    n1, n2 = _preorder(t1), _preorder(t2)
    pairs = [(i, j) for i in range(len(n1)) for j in range(len(n2))]
    best = len(n1) + len(n2)

    def compatible(p, q) -> bool:
        (i1, j1), (i2, j2) = p, q
        if i1 == i2 or j1 == j2:
            return False
        if _is_ancestor(n1, i1, i2) != _is_ancestor(n2, j1, j2):
            return False
        if _is_ancestor(n1, i2, i1) != _is_ancestor(n2, j2, j1):
            return False
        # left-of: preorder-earlier and not an ancestor
        left1 = i1 < i2 and not _is_ancestor(n1, i1, i2)
        left2 = j1 < j2 and not _is_ancestor(n2, j1, j2)
        return left1 == left2

    def search(start, chosen, relabels):
        nonlocal best
        m = len(chosen)
        cost = relabels + (len(n1) - m) + (len(n2) - m)
        best = min(best, cost)
        for k in range(start, len(pairs)):
            p = pairs[k]
            if all(compatible(p, q) for q in chosen):
                chosen.append(p)
                search(k + 1, chosen, relabels + (n1[p[0]]["label"] != n2[p[1]]["label"]))
                chosen.pop()

    search(0, [], 0)
    return best


def tree_size(t) -> int:
    return 1 + sum(tree_size(c) for c in t[1])


def random_tree(rng, max_nodes: int, labels: str = "ab"):
    """Random ordered tree with 1..max_nodes nodes, as ``(label, [children])``."""
    n = rng.randint(1, max_nodes)
    nodes = [(rng.choice(labels), []) for _ in range(n)]
    for k in range(1, n):
        nodes[rng.randrange(k)][1].append(nodes[k])
    return nodes[0]


# -- generation metrics ----------------------------------------------------------


def bleu_oracle(pred: list[str], ref: list[str], max_n: int = 4) -> float:
    """Sentence BLEU with add-one smoothing on zero-match orders."""
    if not pred or not ref:
        return 0.0
    logs = []
    for n in range(1, max_n + 1):
        p_grams = [tuple(pred[i:i + n]) for i in range(len(pred) - n + 1)]
        r_grams = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
        total = len(p_grams)
        if total == 0:
            logs.append(math.log(1.0 / 1.0))
            continue
        matches = 0
        remaining = list(r_grams)
        for g in p_grams:
            if g in remaining:
                remaining.remove(g)
                matches += 1
        p = matches / total if matches else 1.0 / (total + 1)
        logs.append(math.log(p))
    bp = min(1.0, math.exp(1 - len(ref) / len(pred)))
    return bp * math.exp(sum(logs) / max_n)


def unigram_f1_oracle(pred: list[str], ref: list[str]) -> float:
    if not pred and not ref:
        return 1.0
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    p, r = overlap / len(pred), overlap / len(ref)
    return 2 * p * r / (p + r)
