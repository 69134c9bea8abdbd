"""Prompt template bundles and rendering."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .errors import TemplateError

TEMPLATE_NAMES = ("zero_shot", "zero_shot_cot", "reflection", "refinement")
PLACEHOLDERS = frozenset({"question", "prev_answer", "memory", "plan", "answer_marker"})
ANSWER_MARKER = "ANSWER:"
PLAN_MARKER = "STEP:"
NO_MEMORY_LINE = "(no prior reflections)"
NO_PLAN_LINE = "(no feasible corrective actions were proposed; rely on the reflection history)"

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(m.group(1) for m in _PLACEHOLDER_RE.finditer(self.body))


@dataclass(frozen=True)
class TemplateBundle:
    name: str
    system: str
    templates: Mapping[str, PromptTemplate]

    def __getitem__(self, name: str) -> PromptTemplate:
        try:
            return self.templates[name]
        except KeyError:
            raise TemplateError(f"template bundle {self.name!r} has no template {name!r}") from None

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(b"system\0" + self.system.encode("utf-8") + b"\0")
        for key in sorted(self.templates):
            h.update(key.encode("utf-8") + b"\0" + self.templates[key].body.encode("utf-8") + b"\0")
        return h.hexdigest()


def _read_bundle_dir(name: str, read) -> TemplateBundle:
    templates = {}
    for tname in TEMPLATE_NAMES:
        body = read(f"{tname}.txt")
        if body is None:
            raise TemplateError(f"template bundle {name!r} is missing {tname}.txt")
        tpl = PromptTemplate(tname, body.rstrip("\n"))
        unknown = tpl.placeholders - PLACEHOLDERS
        if unknown:
            raise TemplateError(f"{name}/{tname}.txt uses unknown placeholder(s) {sorted(unknown)}")
        templates[tname] = tpl
    system = read("system.txt") or ""
    return TemplateBundle(name, system.strip(), templates)


_CACHE: dict[str, TemplateBundle] = {}


def load_templates(template_set: str = "default") -> TemplateBundle:
    """Resolve ``template_set`` as a built-in bundle name or a directory path."""
    if template_set in _CACHE:
        return _CACHE[template_set]
    builtin = resources.files("ocr_agent").joinpath("data/templates", template_set)
    if builtin.is_dir():
        def read(fname):
            f = builtin.joinpath(fname)
            return f.read_text("utf-8") if f.is_file() else None
    else:
        path = Path(template_set)
        if not path.is_dir():
            raise TemplateError(f"unknown template set {template_set!r}")

        def read(fname):
            f = path / fname
            return f.read_text("utf-8") if f.is_file() else None
    bundle = _read_bundle_dir(template_set, read)
    _CACHE[template_set] = bundle
    return bundle


def _first_sentence(text: str) -> str:
    text = " ".join(text.split())
    m = re.search(r"(.+?[.!?])(\s|$)", text)
    return m.group(1) if m else text


def format_memory(records: Sequence, budget: int | None = None) -> tuple[str, bool]:
    """Render reflection records as numbered entries.

    ``records`` holds objects with ``iteration`` and ``text`` (or
    ``(iteration, text)`` pairs). When the result would exceed ``budget``
    characters, the oldest entries are cut down to their first sentence,
    one at a time, until it fits or nothing is left to shorten. Returns the
    text and whether shortening happened.
    """
    items = [(r[0], r[1]) if isinstance(r, tuple) else (r.iteration, r.text) for r in records]
    if not items:
        return NO_MEMORY_LINE, False

    def join(entries):
        return "\n".join(f"Reflection {it}: {text.strip()}" for it, text in entries)

    rendered = join(items)
    truncated = False
    k = 0
    while budget is not None and len(rendered) > budget and k < len(items):
        it, text = items[k]
        short = _first_sentence(text)
        if short != text.strip():
            items[k] = (it, short)
            truncated = True
            rendered = join(items)
        k += 1
    return rendered, truncated


def format_plan(actions: Sequence) -> str:
    texts = [a if isinstance(a, str) else a.text for a in actions]
    if not texts:
        return NO_PLAN_LINE
    return "\n".join(f"- {t}" for t in texts)


def render_text(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    missing = sorted(template.placeholders - set(bindings))
    if missing:
        raise TemplateError(f"template {template.name!r}: unbound placeholder(s) {', '.join('{' + m + '}' for m in missing)}")
    # single pass: bound values are never re-scanned for placeholders
    return _PLACEHOLDER_RE.sub(lambda m: str(bindings[m.group(1)]), template.body)


def render(
    template: PromptTemplate,
    bindings: Mapping[str, object],
    *,
    system: str | None = None,
    memory_budget: int | None = None,
) -> list[tuple[str, str]]:
    """Render ``template`` into a ``[(role, text), ...]`` message list.

    ``memory`` may be bound to a list of reflection records and ``plan`` to
    a list of actions; both are expanded into their text sections.
    """
    values = {"answer_marker": ANSWER_MARKER}
    for key, value in bindings.items():
        if key == "memory" and not isinstance(value, str):
            value, _ = format_memory(value, memory_budget)
        elif key == "plan" and not isinstance(value, str):
            value = format_plan(value)
        values[key] = value
    messages = []
    if system:
        messages.append(("system", system))
    messages.append(("user", render_text(template, values)))
    return messages
