from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from typing import Any

_WS = re.compile(r"\s+")
_TRAILING_PUNCT = ".,;:!?。，；：！？、"


@dataclass(frozen=True)
class MetricScore:
    value: float
    metric: str
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        v = float(self.value)
        if not (-1e-9 <= v <= 1 + 1e-9):
            raise ValueError(f"{self.metric} produced {v}, outside [0, 1]")
        object.__setattr__(self, "value", min(1.0, max(0.0, v)))

    def to_dict(self) -> dict:
        return {"value": self.value, "metric": self.metric, "diagnostics": self.diagnostics}

    @classmethod
    def from_dict(cls, d: dict) -> MetricScore:
        return cls(d["value"], d["metric"], dict(d.get("diagnostics") or {}))


def normalize_text(text: str) -> str:
    """Canonical form used by every string comparison in the metric suite.

    NFKC, casefold, whitespace collapsed to single spaces, and trailing
    sentence punctuation removed.
    """
    text = unicodedata.normalize("NFKC", text).casefold()
    text = _WS.sub(" ", text).strip()
    return text.rstrip(_TRAILING_PUNCT).rstrip()
