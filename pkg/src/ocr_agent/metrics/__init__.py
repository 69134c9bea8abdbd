"""Task-family scoring functions, each returning a value in [0, 1]."""

from .base import MetricScore, normalize_text
from .counting import counting_score
from .extraction import KeyValueSet, extraction_f1
from .generation import bleu, edit_similarity, long_reading_score, meteor_lite, token_f1, tokenize
from .geometry import BoundingBox, best_iou, iou, spotting_score
from .tables import TableNode, parse_table_markup, teds, tree_edit_distance
from .text import anls, contains_match, exact_match, levenshtein, normalized_similarity, vqa_score

TableTree = TableNode

__all__ = [
    "BoundingBox", "KeyValueSet", "MetricScore", "TableNode", "TableTree",
    "anls", "best_iou", "bleu", "contains_match", "counting_score", "edit_similarity",
    "exact_match", "extraction_f1", "iou", "levenshtein", "long_reading_score", "meteor_lite",
    "normalize_text", "normalized_similarity", "parse_table_markup", "spotting_score", "teds",
    "token_f1", "tokenize", "tree_edit_distance", "vqa_score",
]
