"""Table trees, markup parsing, Zhang-Shasha tree edit distance and TEDS."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from html.parser import HTMLParser
from typing import Callable, Iterator

from .base import MetricScore, normalize_text

_WRAPPERS = {"thead", "tbody", "tfoot"}
_CELLS = {"td", "th"}


@dataclass
class TableNode:
    tag: str
    text: str = ""
    colspan: int = 1
    rowspan: int = 1
    children: list[TableNode] = field(default_factory=list)

    def add(self, child: TableNode) -> TableNode:
        self.children.append(child)
        return self

    @property
    def label(self) -> tuple:
        return (self.tag, self.colspan, self.rowspan, normalize_text(self.text))

    def iter(self) -> Iterator[TableNode]:
        yield self
        for c in self.children:
            yield from c.iter()

    def size(self) -> int:
        return sum(1 for _ in self.iter())

    def __repr__(self) -> str:
        inner = "".join(repr(c) for c in self.children)
        text = f" {self.text!r}" if self.text else ""
        return f"({self.tag}{text}{inner})"


# -- Zhang-Shasha ---------------------------------------------------------------


class _Annotated:
    """Postorder numbering, leftmost-leaf descendants and keyroots of a tree."""

    def __init__(self, root, children: Callable):
        self.nodes = []
        self.lmd = []
        stack = [(root, False)]
        lmd_of = {}
        while stack:
            node, expanded = stack.pop()
            kids = children(node)
            if expanded or not kids:
                idx = len(self.nodes)
                self.nodes.append(node)
                lmd_of[id(node)] = lmd_of[id(kids[0])] if kids else idx
                self.lmd.append(lmd_of[id(node)])
            else:
                stack.append((node, True))
                for k in reversed(kids):
                    stack.append((k, False))
        seen = {}
        for i, l in enumerate(self.lmd):
            seen[l] = i
        self.keyroots = sorted(seen.values())


def tree_edit_distance(
    a,
    b,
    *,
    children: Callable = lambda n: n.children,
    relabel_cost: Callable = lambda x, y: float(x.label != y.label),
    insert_cost: Callable = lambda n: 1.0,
    delete_cost: Callable = lambda n: 1.0,
) -> float:
    """Ordered tree edit distance (Zhang and Shasha, 1989)."""
    A = _Annotated(a, children)
    B = _Annotated(b, children)
    n, m = len(A.nodes), len(B.nodes)
    td = [[0.0] * m for _ in range(n)]

    for i in A.keyroots:
        for j in B.keyroots:
            li, lj = A.lmd[i], B.lmd[j]
            rows, cols = i - li + 2, j - lj + 2
            fd = [[0.0] * cols for _ in range(rows)]
            for x in range(1, rows):
                fd[x][0] = fd[x - 1][0] + delete_cost(A.nodes[li + x - 1])
            for y in range(1, cols):
                fd[0][y] = fd[0][y - 1] + insert_cost(B.nodes[lj + y - 1])
            for x in range(1, rows):
                ai = li + x - 1
                for y in range(1, cols):
                    bj = lj + y - 1
                    dele = fd[x - 1][y] + delete_cost(A.nodes[ai])
                    ins = fd[x][y - 1] + insert_cost(B.nodes[bj])
                    if A.lmd[ai] == li and B.lmd[bj] == lj:
                        ren = fd[x - 1][y - 1] + relabel_cost(A.nodes[ai], B.nodes[bj])
                        fd[x][y] = td[ai][bj] = min(dele, ins, ren)
                    else:
                        px = A.lmd[ai] - li
                        py = B.lmd[bj] - lj
                        fd[x][y] = min(dele, ins, fd[px][py] + td[ai][bj])
    return td[n - 1][m - 1]


def teds(pred: TableNode, gold: TableNode) -> MetricScore:
    """``1 - TED / max(|pred|, |gold|)`` with unit costs."""
    dist = tree_edit_distance(pred, gold)
    n_pred, n_gold = pred.size(), gold.size()
    value = 1.0 - dist / max(n_pred, n_gold)
    return MetricScore(max(0.0, value), "teds", {"ted": dist, "pred_nodes": n_pred, "gold_nodes": n_gold})


# -- markup parsing ---------------------------------------------------------------


class _TableHTMLParser(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.roots: list[TableNode] = []
        self.stack: list[TableNode] = []
        self.cell: TableNode | None = None

    def handle_starttag(self, tag, attrs):
        tag = tag.lower()
        if tag == "table":
            node = TableNode("table")
            if self.stack:
                # nested table: keep it inside the enclosing cell/row
                self.stack[-1].add(node)
            else:
                self.roots.append(node)
            self.stack.append(node)
        elif not self.stack or tag in _WRAPPERS:
            return
        elif tag == "tr":
            while self.stack and self.stack[-1].tag in ("tr", "td"):
                self._close_top()
            node = TableNode("tr")
            self.stack[-1].add(node)
            self.stack.append(node)
        elif tag in _CELLS:
            if self.stack[-1].tag == "td":
                self._close_top()
            if self.stack[-1].tag == "table":
                row = TableNode("tr")
                self.stack[-1].add(row)
                self.stack.append(row)
            attrs = dict(attrs)
            node = TableNode("td", colspan=_span(attrs.get("colspan")), rowspan=_span(attrs.get("rowspan")))
            self.stack[-1].add(node)
            self.stack.append(node)
        elif tag == "br" and self.stack[-1].tag == "td":
            self.stack[-1].text += " "

    def _close_top(self):
        node = self.stack.pop()
        if node.tag == "td":
            node.text = " ".join(node.text.split())

    def handle_endtag(self, tag):
        tag = tag.lower()
        if tag in _CELLS:
            tag = "td"
        if tag not in ("table", "tr", "td"):
            return
        if not any(n.tag == tag for n in self.stack):
            return
        while self.stack:
            top = self.stack[-1].tag
            self._close_top()
            if top == tag:
                break

    def handle_data(self, data):
        if self.stack and self.stack[-1].tag == "td":
            self.stack[-1].text += data


def _span(value) -> int:
    try:
        return max(1, int(str(value).strip()))
    except (TypeError, ValueError):
        return 1


_PIPE_ROW = re.compile(r"^\s*\|.*\|\s*$")
_PIPE_SEP = re.compile(r"^\s*\|?\s*:?-{2,}:?\s*(\|\s*:?-{2,}:?\s*)*\|?\s*$")


def _parse_pipe_table(text: str) -> TableNode | None:
    rows = []
    for line in text.splitlines():
        if _PIPE_SEP.match(line):
            continue
        if _PIPE_ROW.match(line):
            inner = line.strip()[1:-1]
            rows.append([c.strip() for c in inner.split("|")])
    if not rows:
        return None
    root = TableNode("table")
    for cells in rows:
        tr = TableNode("tr")
        for c in cells:
            tr.add(TableNode("td", text=c))
        root.add(tr)
    return root


def parse_table_markup(text: str) -> TableNode:
    """Tolerant parse of an HTML or pipe-delimited table into a tree.

    ``table -> tr -> td`` is the only shape produced: thead/tbody/tfoot are
    flattened and th is read as td, so HTML and pipe tables of the same
    grid compare equal. Text that holds neither yields a lone root carrying
    the raw text.
    """
    if "<" in text:
        parser = _TableHTMLParser()
        try:
            parser.feed(text)
            parser.close()
        except Exception:  # HTMLParser is lenient; guard against pathological input anyway
            parser.roots = []
        while parser.stack:
            parser._close_top()
        if parser.roots:
            return parser.roots[0]
    pipe = _parse_pipe_table(text)
    if pipe is not None:
        return pipe
    return TableNode("table", text=text.strip())
