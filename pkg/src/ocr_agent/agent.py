"""The reflect / filter / refine loop.

One episode answers a question zero-shot, then runs ``max_iterations``
rounds. Each round asks the model to critique its previous answer and
propose corrective steps, drops steps the model cannot execute, records the
critique in an append-only memory, and asks for a refined answer.

Which parts are active depends on the mode::

    mode             loop  filter  memory in reflect  memory in refine
    naive            no    -       -                  -
    cot              no    -       -                  -
    self_refine      yes   no      none               current only
    capability_only  yes   yes     none               current only
    memory_only      yes   no      all earlier        all so far
    full             yes   yes     all earlier        all so far
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .backend import GenerationParams, ImagePayload, ModelBackend, ModelRequest, encode_image
from .capability import PlanAction, Taxonomy, Verdict, default_taxonomy, filter_plan
from .errors import BackendError, ConfigError, SequenceError
from .templates import ANSWER_MARKER, TemplateBundle, format_memory, load_templates, render

MODES = ("naive", "cot", "self_refine", "capability_only", "memory_only", "full")
ITERATIVE_MODES = ("self_refine", "capability_only", "memory_only", "full")
DEFAULT_ITERATIONS = 3


class PlanParseWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModeSpec:
    iterative: bool
    cot: bool
    filters: bool
    full_memory: bool


MODE_SPECS = {
    "naive": ModeSpec(iterative=False, cot=False, filters=False, full_memory=False),
    "cot": ModeSpec(iterative=False, cot=True, filters=False, full_memory=False),
    "self_refine": ModeSpec(iterative=True, cot=False, filters=False, full_memory=False),
    "capability_only": ModeSpec(iterative=True, cot=False, filters=True, full_memory=False),
    "memory_only": ModeSpec(iterative=True, cot=False, filters=False, full_memory=True),
    "full": ModeSpec(iterative=True, cot=False, filters=True, full_memory=True),
}


@dataclass(frozen=True)
class AgentConfig:
    """Episode settings.

    ``max_iterations`` defaults to 3 for the looping modes and 0 for
    ``naive``/``cot``, which cannot loop.
    """

    mode: str = "full"
    max_iterations: int | None = None
    template_set: str = "default"
    generation: GenerationParams = field(default_factory=GenerationParams)
    memory_char_budget: int | None = None

    def __post_init__(self):
        if self.mode not in MODE_SPECS:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        spec = MODE_SPECS[self.mode]
        if self.max_iterations is None:
            object.__setattr__(self, "max_iterations", DEFAULT_ITERATIONS if spec.iterative else 0)
        t = self.max_iterations
        if isinstance(t, bool) or not isinstance(t, int) or t < 0:
            raise ConfigError(f"max_iterations must be a non-negative integer, got {t!r}")
        if not spec.iterative and t != 0:
            raise ConfigError(f"mode {self.mode!r} does not iterate; max_iterations must be 0, got {t}")

    @property
    def spec(self) -> ModeSpec:
        return MODE_SPECS[self.mode]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "max_iterations": self.max_iterations,
            "template_set": self.template_set,
            "generation": self.generation.to_dict(),
            "memory_char_budget": self.memory_char_budget,
        }

    @classmethod
    def from_dict(cls, d: dict) -> AgentConfig:
        return cls(
            mode=d["mode"],
            max_iterations=d.get("max_iterations"),
            template_set=d.get("template_set", "default"),
            generation=GenerationParams(**d.get("generation", {})),
            memory_char_budget=d.get("memory_char_budget"),
        )


@dataclass(frozen=True)
class ReflectionRecord:
    iteration: int
    text: str
    extracted_plan: tuple[PlanAction, ...] = ()
    feasible_plan: tuple[PlanAction, ...] = ()

    @property
    def rejected_plan(self) -> tuple[PlanAction, ...]:
        return tuple(a for a in self.extracted_plan if a.verdict is Verdict.INFEASIBLE)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "text": self.text,
            "extracted_plan": [a.to_dict() for a in self.extracted_plan],
            "feasible_plan": [a.to_dict() for a in self.feasible_plan],
        }

    @classmethod
    def from_dict(cls, d: dict) -> ReflectionRecord:
        return cls(
            iteration=d["iteration"],
            text=d["text"],
            extracted_plan=tuple(PlanAction.from_dict(a) for a in d["extracted_plan"]),
            feasible_plan=tuple(PlanAction.from_dict(a) for a in d["feasible_plan"]),
        )


@dataclass(frozen=True)
class MemoryStore:
    records: tuple[ReflectionRecord, ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def update_memory(memory: MemoryStore, record: ReflectionRecord) -> MemoryStore:
    """Return a new store with ``record`` appended; the input store is untouched."""
    expected = len(memory.records) + 1
    if record.iteration != expected:
        raise SequenceError(f"expected reflection for iteration {expected}, got {record.iteration}")
    return MemoryStore(memory.records + (record,))


@dataclass(frozen=True)
class CallRecord:
    kind: str
    iteration: int
    digest: str


@dataclass
class EpisodeState:
    sample_id: str
    mode: str
    answers: list[str] = field(default_factory=list)
    reflections: list[ReflectionRecord] = field(default_factory=list)
    memory: MemoryStore = field(default_factory=MemoryStore)
    call_trace: list[CallRecord] = field(default_factory=list)
    memory_truncated: bool = False
    error: str | None = None

    @property
    def final_answer(self) -> str:
        return self.answers[-1]

    @property
    def completed(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "mode": self.mode,
            "answers": list(self.answers),
            "reflections": [r.to_dict() for r in self.reflections],
            "call_trace": [[c.kind, c.iteration, c.digest] for c in self.call_trace],
            "memory_truncated": self.memory_truncated,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EpisodeState:
        reflections = [ReflectionRecord.from_dict(r) for r in d["reflections"]]
        return cls(
            sample_id=d["sample_id"],
            mode=d["mode"],
            answers=list(d["answers"]),
            reflections=reflections,
            memory=MemoryStore(tuple(reflections)),
            call_trace=[CallRecord(k, i, g) for k, i, g in d["call_trace"]],
            memory_truncated=d.get("memory_truncated", False),
            error=d.get("error"),
        )


# -- plan extraction -------------------------------------------------------------

_STEP_LINE = re.compile(r"^\s*(?:[-*•]\s*)?(?:\*\*)?STEP(?:\*\*)?\s*\d*\s*[:：](?:\*\*)?\s*(.*)$", re.IGNORECASE)
_NUMBERED_LINE = re.compile(r"^\s*\(?\d{1,3}[.)]\s+(.*)$")
_BULLET_LINE = re.compile(r"^\s*[-*•]\s+(.*)$")
_PLAN_HEADER = re.compile(r"^\s*(?:#+\s*)?(?:\*\*)?(?:corrective\s+|revised\s+|action\s+)?plan\b[^\n]*$", re.IGNORECASE)


def _plan_lines(text: str) -> list[tuple[int, str]]:
    """(line index, action text) for every plan line, in order."""
    found = []
    in_section = False
    for idx, line in enumerate(text.splitlines()):
        if not line.strip():
            in_section = False
            continue
        m = _STEP_LINE.match(line) or _NUMBERED_LINE.match(line)
        if m is None and in_section:
            m = _BULLET_LINE.match(line)
        if m is not None:
            action = m.group(1).strip().strip("*").strip()
            if action:
                found.append((idx, action))
            continue
        if _PLAN_HEADER.match(line):
            in_section = True
    return found


def extract_plan(reflection_text: str) -> list[PlanAction]:
    """Corrective actions in order of appearance, all still unclassified.

    Recognised: ``STEP:`` lines anywhere, numbered items (``1.``, ``2)``)
    anywhere, and dash/star bullets inside a section headed by a line
    starting with "Plan". Duplicates are kept.
    """
    return [PlanAction(text) for _, text in _plan_lines(reflection_text)]


def redact_rejected(text: str, rejected: Iterable[PlanAction]) -> str:
    """Drop the plan lines of ``text`` whose action was rejected."""
    banned = {a.text for a in rejected}
    if not banned:
        return text
    drop = {idx for idx, action in _plan_lines(text) if action in banned}
    return "\n".join(line for idx, line in enumerate(text.splitlines()) if idx not in drop)


def extract_answer(response: str) -> str:
    """Text after the last answer marker, or the whole response when there is none."""
    pos = response.rfind(ANSWER_MARKER)
    if pos >= 0:
        tail = response[pos + len(ANSWER_MARKER):].strip()
        if tail:
            return tail
    return response.strip()


# -- episode steps -----------------------------------------------------------------


class _Episode:
    """Per-episode context shared by the step functions."""

    def __init__(self, sample, config: AgentConfig, backend: ModelBackend, taxonomy: Taxonomy | None,
                 image: ImagePayload | None = None):
        self.sample = sample
        self.config = config
        self.backend = backend
        self.taxonomy = taxonomy or default_taxonomy()
        self.bundle: TemplateBundle = load_templates(config.template_set)
        self.image = image if image is not None else encode_image(_resolve_image(sample))
        self.state = EpisodeState(sample_id=str(sample.id), mode=config.mode)

    def call(self, kind: str, iteration: int, messages) -> str:
        request = ModelRequest(
            image=self.image,
            messages=tuple(messages),
            params=self.config.generation,
            sample_id=self.state.sample_id,
            kind=kind,
            iteration=iteration,
        )
        response = self.backend.generate(request)
        self.state.call_trace.append(CallRecord(kind, iteration, request.digest))
        return response.text

    def memory_block(self, records: Sequence[ReflectionRecord], redact: bool) -> str:
        items = [(r.iteration, redact_rejected(r.text, r.rejected_plan) if redact else r.text) for r in records]
        text, truncated = format_memory(items, self.config.memory_char_budget)
        self.state.memory_truncated |= truncated
        return text


def _resolve_image(sample):
    resolve = getattr(sample, "resolve_image", None)
    return resolve() if resolve is not None else sample.image_ref


def initial_answer(ep: _Episode) -> str:
    name = "zero_shot_cot" if ep.config.spec.cot else "zero_shot"
    messages = render(ep.bundle[name], {"question": ep.sample.question}, system=ep.bundle.system)
    answer = extract_answer(ep.call("initial", 0, messages))
    ep.state.answers.append(answer)
    return answer


def reflect(ep: _Episode, prev_answer: str, memory: MemoryStore, iteration: int) -> ReflectionRecord:
    if not prev_answer.strip():
        raise ValueError("cannot reflect on an empty answer")
    history = memory.records if ep.config.spec.full_memory else ()
    messages = render(
        ep.bundle["reflection"],
        {"question": ep.sample.question, "prev_answer": prev_answer,
         "memory": ep.memory_block(history, redact=False)},
        system=ep.bundle.system,
    )
    text = ep.call("reflect", iteration, messages)
    extracted = extract_plan(text)
    if not extracted:
        warnings.warn(f"no plan markers in reflection {iteration} of {ep.state.sample_id}", PlanParseWarning,
                      stacklevel=2)
    feasible, rejected = filter_plan(extracted, ep.taxonomy)
    classified = tuple(_classified(extracted, feasible, rejected))
    return ReflectionRecord(iteration, text, classified, tuple(feasible))


def _classified(extracted, feasible, rejected):
    by_text = {a.text: a for a in feasible}
    by_text.update({a.text: a for a in rejected})
    for a in extracted:
        yield by_text[a.text]


def refine(ep: _Episode, prev_answer: str, plan: Sequence[PlanAction], memory_including_current: MemoryStore) -> str:
    if not memory_including_current.records:
        raise ValueError("refine needs the current reflection in memory")
    current = memory_including_current.records[-1]
    history = memory_including_current.records if ep.config.spec.full_memory else (current,)
    messages = render(
        ep.bundle["refinement"],
        {"question": ep.sample.question, "prev_answer": prev_answer,
         "memory": ep.memory_block(history, redact=ep.config.spec.filters), "plan": list(plan)},
        system=ep.bundle.system,
    )
    answer = extract_answer(ep.call("refine", current.iteration, messages))
    ep.state.answers.append(answer)
    return answer


def run_episode(sample, config: AgentConfig, backend: ModelBackend, *, taxonomy: Taxonomy | None = None,
                image: ImagePayload | None = None) -> EpisodeState:
    """Run one sample through the loop and return its full state.

    On a backend failure the partially filled state is attached to the
    raised BackendError as ``exc.episode``.
    """
    ep = _Episode(sample, config, backend, taxonomy, image)
    state = ep.state
    try:
        answer = initial_answer(ep)
        if config.spec.iterative:
            for i in range(1, config.max_iterations + 1):
                record = reflect(ep, answer, state.memory, i)
                plan = record.feasible_plan if config.spec.filters else record.extracted_plan
                state.memory = update_memory(state.memory, record)
                state.reflections.append(record)
                answer = refine(ep, answer, plan, state.memory)
    except BackendError as exc:
        state.error = str(exc)
        exc.episode = state
        raise
    return state


# -- trace export ------------------------------------------------------------------


def episode_to_json(state: EpisodeState) -> str:
    return json.dumps(state.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def export_traces(states: Iterable[EpisodeState], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in states:
            fh.write(episode_to_json(s) + "\n")


def import_traces(path: str | Path) -> list[EpisodeState]:
    with open(path, encoding="utf-8") as fh:
        return [EpisodeState.from_dict(json.loads(line)) for line in fh if line.strip()]
