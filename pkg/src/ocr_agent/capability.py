"""Feasibility classification of plan actions.

A reflection may propose corrective steps the model cannot carry out on its
own (touch up the pixels, hand the page to a person, run another program).
These steps are classified against an ordered rule taxonomy and dropped
before they can condition a refinement call.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable

from .errors import TaxonomyParseError


class Verdict(str, enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNCLASSIFIED = "unclassified"


class Category(str, enum.Enum):
    TEXT_OPERATION = "text_operation"
    IMAGE_MANIPULATION = "image_manipulation"
    HUMAN_IN_LOOP = "human_in_loop"
    EXTERNAL_TOOL = "external_tool"
    UNKNOWN = "unknown"


INFEASIBLE_CATEGORIES = frozenset(
    {Category.IMAGE_MANIPULATION, Category.HUMAN_IN_LOOP, Category.EXTERNAL_TOOL}
)
FEASIBLE_CATEGORIES = frozenset({Category.TEXT_OPERATION, Category.UNKNOWN})


@dataclass(frozen=True)
class PlanAction:
    text: str
    verdict: Verdict = Verdict.UNCLASSIFIED
    category: Category = Category.UNKNOWN
    matched_rule: str | None = None

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "verdict": self.verdict.value,
            "category": self.category.value,
            "matched_rule": self.matched_rule,
        }

    @classmethod
    def from_dict(cls, d: dict) -> PlanAction:
        return cls(
            text=d["text"],
            verdict=Verdict(d["verdict"]),
            category=Category(d["category"]),
            matched_rule=d.get("matched_rule"),
        )


@dataclass(frozen=True)
class Rule:
    rule_id: str
    pattern: re.Pattern
    category: Category
    verdict: Verdict


@dataclass(frozen=True)
class Taxonomy:
    """Ordered rules; the first rule whose pattern matches decides."""

    rules: tuple[Rule, ...] = ()
    default_verdict: Verdict = Verdict.FEASIBLE

    def match(self, text: str) -> Rule | None:
        for rule in self.rules:
            if rule.pattern.search(text):
                return rule
        return None


def _parse_rule(line: str, lineno: int, rule_id: str) -> Rule:
    parts = line.split("\t")
    if len(parts) != 3:
        raise TaxonomyParseError(
            f"expected 'verdict<TAB>category<TAB>pattern', got {len(parts)} field(s)", lineno
        )
    verdict_s, category_s, pattern_s = (p.strip() for p in parts)
    try:
        verdict = Verdict(verdict_s.lower())
    except ValueError:
        raise TaxonomyParseError(f"unknown verdict {verdict_s!r}", lineno) from None
    if verdict is Verdict.UNCLASSIFIED:
        raise TaxonomyParseError("rules must decide feasible or infeasible", lineno)
    try:
        category = Category(category_s.lower())
    except ValueError:
        raise TaxonomyParseError(f"unknown category {category_s!r}", lineno) from None
    allowed = INFEASIBLE_CATEGORIES if verdict is Verdict.INFEASIBLE else FEASIBLE_CATEGORIES
    if category not in allowed:
        raise TaxonomyParseError(
            f"category {category.value} is not compatible with verdict {verdict.value}", lineno
        )
    if not pattern_s:
        raise TaxonomyParseError("empty pattern", lineno)
    try:
        pattern = re.compile(pattern_s, re.IGNORECASE)
    except re.error as exc:
        raise TaxonomyParseError(f"malformed pattern {pattern_s!r}: {exc}", lineno) from None
    return Rule(rule_id, pattern, category, verdict)


def parse_taxonomy(text: str, *, source: str = "<rules>") -> Taxonomy:
    rules = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        rules.append(_parse_rule(line, lineno, f"{source}:{lineno}"))
    return Taxonomy(tuple(rules))


def load_taxonomy(source: str | Path | None = None) -> Taxonomy:
    """Load a rule document from ``source``; ``None`` gives the built-in default."""
    if source is None:
        return default_taxonomy()
    path = Path(source)
    return parse_taxonomy(path.read_text(encoding="utf-8"), source=path.name)


_DEFAULT: Taxonomy | None = None


def default_taxonomy() -> Taxonomy:
    global _DEFAULT
    if _DEFAULT is None:
        text = resources.files("ocr_agent").joinpath("data/default_taxonomy.tsv").read_text("utf-8")
        _DEFAULT = parse_taxonomy(text, source="default")
    return _DEFAULT


def classify_action(action: PlanAction | str, taxonomy: Taxonomy | None = None) -> PlanAction:
    if isinstance(action, str):
        action = PlanAction(action)
    if not action.text.strip():
        raise ValueError("cannot classify an empty action")
    taxonomy = taxonomy or default_taxonomy()
    rule = taxonomy.match(action.text)
    if rule is None:
        return replace(action, verdict=taxonomy.default_verdict, category=Category.UNKNOWN,
                       matched_rule=None)
    return replace(action, verdict=rule.verdict, category=rule.category, matched_rule=rule.rule_id)


def is_feasible(text: str, taxonomy: Taxonomy | None = None) -> bool:
    return classify_action(PlanAction(text), taxonomy).verdict is Verdict.FEASIBLE


def filter_plan(
    plan: Iterable[PlanAction], taxonomy: Taxonomy | None = None
) -> tuple[list[PlanAction], list[PlanAction]]:
    """Split ``plan`` into (feasible, rejected), both in input order.

    Repeated feasible actions with identical text are kept once.
    """
    feasible: list[PlanAction] = []
    rejected: list[PlanAction] = []
    seen: set[str] = set()
    for action in plan:
        if action.verdict is Verdict.UNCLASSIFIED:
            action = classify_action(action, taxonomy)
        if action.verdict is Verdict.INFEASIBLE:
            rejected.append(action)
        elif action.text not in seen:
            seen.add(action.text)
            feasible.append(action)
    return feasible, rejected
