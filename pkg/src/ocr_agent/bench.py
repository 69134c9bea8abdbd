"""Benchmark harness: datasets, per-task scoring, checkpointed runs and reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import re
import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .agent import MODES, AgentConfig, EpisodeState, episode_to_json, run_episode
from .backend import ModelBackend, encode_image
from .capability import Taxonomy, default_taxonomy
from .errors import (
    BackendError,
    DatasetFormatError,
    DatasetMismatchError,
    EmptyRunError,
    ImageReadError,
    LengthMismatchError,
    NotIterativeError,
    UnsupportedMediaType,
)
from .metrics import (
    BoundingBox,
    MetricScore,
    best_iou,
    counting_score,
    extraction_f1,
    long_reading_score,
    parse_table_markup,
    spotting_score,
    teds,
    vqa_score,
)
from .templates import load_templates

logger = logging.getLogger(__name__)

# Column order of the published result tables; the last two follow.
TASK_TYPES = (
    "recognition", "referring", "spotting", "extraction", "parsing",
    "calculation", "understanding", "reasoning", "counting", "long_reading",
)
LANGUAGES = ("en", "zh")
MODE_LABELS = {
    "naive": "Naive",
    "cot": "CoT",
    "self_refine": "Self-Refine",
    "capability_only": "Capability Reflection",
    "memory_only": "Memory Reflection",
    "full": "Capability & Memory",
}
VQA_TASKS = frozenset({"recognition", "calculation", "understanding", "reasoning"})


# -- samples -----------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    id: str
    image_ref: str
    question: str
    task_type: str
    language: str
    gold: Any
    eval_directive: Any = None
    base_dir: str | None = field(default=None, compare=False)

    def resolve_image(self) -> str | bytes:
        ref = self.image_ref
        if re.match(r"^https?://", ref):
            import httpx

            try:
                resp = httpx.get(ref, timeout=60.0, follow_redirects=True)
                resp.raise_for_status()
            except httpx.HTTPError as exc:
                raise ImageReadError(f"cannot fetch {ref}: {exc}") from exc
            return resp.content
        path = Path(ref)
        if not path.is_absolute() and self.base_dir:
            path = Path(self.base_dir) / path
        return str(path)

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "image_ref": self.image_ref,
            "question": self.question,
            "task_type": self.task_type,
            "language": self.language,
            "gold": self.gold,
        }
        if self.eval_directive is not None:
            d["eval_directive"] = self.eval_directive
        return d


@dataclass(frozen=True)
class Diagnostic:
    line: int
    message: str
    sample_id: str | None = None

    def __str__(self) -> str:
        where = f"line {self.line}" + (f" ({self.sample_id})" if self.sample_id else "")
        return f"{where}: {self.message}"


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _check_box(b) -> str | None:
    if not (isinstance(b, (list, tuple)) and len(b) == 4 and all(_is_number(v) for v in b)):
        return f"box must be four numbers, got {b!r}"
    if b[0] > b[2] or b[1] > b[3]:
        return f"box {b!r} has min greater than max"
    return None


def _normalize_gold(task: str, gold):
    """Return (gold in canonical form, error message or None)."""
    if task in VQA_TASKS:
        if isinstance(gold, str):
            gold = [gold]
        if not (isinstance(gold, list) and gold and all(isinstance(g, str) for g in gold)):
            return gold, "gold must be a nonempty string or list of strings"
        return gold, None
    if task == "referring":
        if isinstance(gold, list) and gold and _is_number(gold[0]):
            gold = [gold]
        if not isinstance(gold, list) or not gold:
            return gold, "gold must be a box or a nonempty list of boxes"
        for b in gold:
            err = _check_box(b)
            if err:
                return gold, err
        return [list(b) for b in gold], None
    if task == "spotting":
        if not isinstance(gold, list) or not gold:
            return gold, "gold must be a nonempty list of {text, box} items"
        for item in gold:
            if not (isinstance(item, dict) and isinstance(item.get("text"), str)):
                return gold, f"spotting item needs a text field: {item!r}"
            err = _check_box(item.get("box"))
            if err:
                return gold, err
        return gold, None
    if task == "extraction":
        if not isinstance(gold, dict) or not gold:
            return gold, "gold must be a nonempty mapping of field -> value(s)"
        out = {}
        for k, v in gold.items():
            if not isinstance(k, str) or not k.strip():
                return gold, "field names must be nonempty strings"
            vals = [v] if isinstance(v, (str, int, float)) else v
            if not isinstance(vals, list) or not all(isinstance(x, (str, int, float)) for x in vals):
                return gold, f"values of field {k!r} must be strings"
            out[k] = [str(x) for x in vals]
        return out, None
    if task == "parsing":
        if not isinstance(gold, str) or not gold.strip():
            return gold, "gold must be a nonempty table markup string"
        return gold, None
    if task == "counting":
        if _is_number(gold):
            gold = [gold]
        if not (isinstance(gold, list) and gold and all(_is_number(g) and g >= 0 and g == int(g) for g in gold)):
            return gold, "gold must be a non-negative integer or a list of them"
        return [int(g) for g in gold], None
    if task == "long_reading":
        if isinstance(gold, list) and gold and isinstance(gold[0], str):
            gold = gold[0]
        if not isinstance(gold, str) or not gold.strip():
            return gold, "gold must be a nonempty string"
        return gold, None
    return gold, f"unknown task_type {task!r}"


def parse_sample(obj: Mapping, base_dir: str | None = None) -> Sample:
    """Validate one dataset object; raises ValueError with a readable message."""
    if not isinstance(obj, Mapping):
        raise ValueError("line is not a JSON object")
    for key in ("id", "question", "task_type", "gold"):
        if key not in obj:
            raise ValueError(f"missing required field {key!r}")
    image = obj.get("image_ref", obj.get("image"))
    if not isinstance(image, str) or not image:
        raise ValueError("missing required field 'image_ref'")
    if not isinstance(obj["question"], str) or not obj["question"].strip():
        raise ValueError("'question' must be a nonempty string")
    task = obj["task_type"]
    if task not in TASK_TYPES:
        raise ValueError(f"unknown task_type {task!r}; expected one of {', '.join(TASK_TYPES)}")
    language = obj.get("language", "en")
    if language not in LANGUAGES:
        raise ValueError(f"unknown language {language!r}")
    gold, err = _normalize_gold(task, obj["gold"])
    if err:
        raise ValueError(err)
    directive = obj.get("eval_directive", obj.get("eval"))
    return Sample(str(obj["id"]), image, obj["question"], task, language, gold, directive, base_dir)


def validate_dataset(path: str | Path) -> tuple[list[Sample], list[Diagnostic]]:
    """Parse every line, collecting diagnostics instead of stopping at the first problem."""
    path = Path(path)
    base_dir = str(path.parent.resolve())
    samples: list[Sample] = []
    diags: list[Diagnostic] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                diags.append(Diagnostic(lineno, f"invalid JSON: {exc.msg}"))
                continue
            sid = str(obj.get("id")) if isinstance(obj, dict) and "id" in obj else None
            try:
                sample = parse_sample(obj, base_dir)
            except ValueError as exc:
                diags.append(Diagnostic(lineno, str(exc), sid))
                continue
            if sample.id in seen:
                diags.append(Diagnostic(lineno, f"duplicate id {sample.id!r} (first on line {seen[sample.id]})", sample.id))
                continue
            seen[sample.id] = lineno
            samples.append(sample)
    return samples, diags


def load_dataset(path: str | Path, *, strict: bool = True) -> list[Sample]:
    """Load a line-delimited JSON dataset.

    Duplicate ids always raise DatasetFormatError. Other bad lines raise
    in strict mode and are skipped with a logged diagnostic otherwise.
    """
    samples, diags = validate_dataset(path)
    dupes = [d for d in diags if d.message.startswith("duplicate id")]
    if dupes or (strict and diags):
        bad = dupes or diags
        raise DatasetFormatError(f"{path}: {len(bad)} problem(s); first: {bad[0]}", bad)
    for d in diags:
        logger.warning("%s: %s", path, d)
    return samples


def dataset_hash(samples: Sequence[Sample]) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(json.dumps(s.to_dict(), sort_keys=True, ensure_ascii=False).encode("utf-8") + b"\n")
    return h.hexdigest()


# -- answer parsing and scoring --------------------------------------------------

_NUMBER = r"[-+]?\d+(?:\.\d+)?"
_BOX_GROUP = re.compile(rf"[\[(]\s*({_NUMBER})\s*,\s*({_NUMBER})\s*,\s*({_NUMBER})\s*,\s*({_NUMBER})\s*[\])]")
# bare numbers only; skips digits that belong to names such as "x1"
_ANY_NUMBER = re.compile(rf"(?<![A-Za-z_\d.]){_NUMBER}")
_NUMBER_WORDS = {
    w: i for i, w in enumerate(
        "zero one two three four five six seven eight nine ten eleven twelve thirteen fourteen "
        "fifteen sixteen seventeen eighteen nineteen twenty".split()
    )
}
_COUNT_TOKEN = re.compile(r"\d+(?:,\d{3})*(?:\.\d+)?|[a-z]+|[零〇一二两三四五六七八九十]+", re.IGNORECASE)
_ZH_DIGITS = {"零": 0, "〇": 0, "一": 1, "二": 2, "两": 2, "三": 3, "四": 4, "五": 5, "六": 6, "七": 7, "八": 8, "九": 9}


def _zh_number(token: str) -> int | None:
    if "十" not in token:
        return _ZH_DIGITS.get(token) if len(token) == 1 else None
    tens, _, ones = token.partition("十")
    if (tens and tens not in _ZH_DIGITS) or (ones and ones not in _ZH_DIGITS):
        return None
    return (_ZH_DIGITS[tens] if tens else 1) * 10 + (_ZH_DIGITS[ones] if ones else 0)


def parse_counts(answer: str) -> list[int]:
    """Non-negative integers mentioned in ``answer``, in order (digits, English or Chinese number words)."""
    out = []
    for tok in _COUNT_TOKEN.findall(answer):
        if tok[0].isdigit():
            out.append(int(round(float(tok.replace(",", "")))))
        elif tok.lower() in _NUMBER_WORDS:
            out.append(_NUMBER_WORDS[tok.lower()])
        else:
            zh = _zh_number(tok)
            if zh is not None:
                out.append(zh)
    return out


def parse_boxes(answer: str) -> list[BoundingBox]:
    boxes = [BoundingBox.from_corners(*map(float, m.groups())) for m in _BOX_GROUP.finditer(answer)]
    if not boxes:
        nums = [float(x) for x in _ANY_NUMBER.findall(answer)]
        if len(nums) >= 4:
            boxes.append(BoundingBox.from_corners(*nums[:4]))
    return boxes


def parse_spotting(answer: str) -> list[tuple[str, BoundingBox]]:
    """One ``(text, box)`` per bracketed box; the text is whatever else is on that line."""
    items = []
    for line in answer.splitlines():
        matches = list(_BOX_GROUP.finditer(line))
        if not matches:
            continue
        text = _BOX_GROUP.sub(" ", line)
        text = re.sub(r"^\s*(?:[-*•]|\d+[.)])\s*", "", text)
        text = text.strip().strip(":：,;-\"'").strip()
        for m in matches:
            items.append((text, BoundingBox.from_corners(*map(float, m.groups()))))
    return items


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def parse_key_values(answer: str) -> dict[str, list[str]]:
    """Read a JSON object (optionally fenced) or ``key: value`` lines."""
    candidates = [m.group(1) for m in _FENCE.finditer(answer)] + [answer]
    for cand in candidates:
        start, end = cand.find("{"), cand.rfind("}")
        if start < 0 or end <= start:
            continue
        try:
            obj = json.loads(cand[start:end + 1])
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            out = {}
            for k, v in obj.items():
                vals = v if isinstance(v, list) else [v]
                out[str(k)] = [str(x) for x in vals if x is not None]
            return out
    out: dict[str, list[str]] = {}
    for line in answer.splitlines():
        m = re.match(r"^\s*(?:[-*•]\s*)?([^:：]+?)\s*[:：]\s*(.+?)\s*$", line)
        if m:
            out.setdefault(m.group(1), []).append(m.group(2))
    return out


def _counting_pred(answer: str, gold: list[int], directive) -> tuple[list[int], dict]:
    nums = parse_counts(answer)
    detail: dict = {"parsed": nums}
    if len(gold) == 1:
        # a scalar question; the final number is the committed answer
        return [nums[-1] if nums else 0], detail
    fmt = directive.get("format") if isinstance(directive, Mapping) else None
    if len(nums) > len(gold) and fmt != "prefix":
        raise LengthMismatchError(f"{len(nums)} numbers in answer for {len(gold)} gold counts")
    padded = (nums + [0] * len(gold))[:len(gold)]
    return padded, detail


def score_answer(sample: Sample, answer: str, *, tau: float = 0.5) -> MetricScore:
    """Score ``answer`` with the metric of the sample's task type.

    Never raises on malformed answers: a parse failure yields a zero score
    whose diagnostics carry the reason.
    """
    task, gold, directive = sample.task_type, sample.gold, sample.eval_directive
    answer = answer or ""
    try:
        if task == "parsing":
            return teds(parse_table_markup(answer), parse_table_markup(gold))
        if task == "extraction":
            return extraction_f1(parse_key_values(answer), gold)
        if task == "referring":
            boxes = parse_boxes(answer)
            if not boxes:
                return MetricScore(0.0, "iou", {"error": "no box found in answer"})
            return best_iou(boxes[0], [BoundingBox(*b) for b in gold])
        if task == "spotting":
            gold_items = [(g["text"], BoundingBox(*g["box"])) for g in gold]
            return spotting_score(parse_spotting(answer), gold_items,
                                  text_scorer=lambda p, g: vqa_score(p, [g], directive, tau).value)
        if task == "counting":
            pred, detail = _counting_pred(answer, gold, directive)
            score = counting_score(pred, gold)
            return MetricScore(score.value, score.metric, dict(score.diagnostics, **detail))
        if task == "long_reading":
            return long_reading_score(answer, gold)
        return vqa_score(answer, gold, directive, tau)
    except (ValueError, LengthMismatchError) as exc:
        return MetricScore(0.0, task, {"error": f"{type(exc).__name__}: {exc}"})


# -- run results ---------------------------------------------------------------------


@dataclass
class SampleRecord:
    sample_id: str
    task_type: str
    language: str
    status: str  # "scored" or "failed"
    scores: list[float] = field(default_factory=list)
    metric: str | None = None
    final_diagnostics: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def final_score(self) -> float:
        return self.scores[-1]

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "task_type": self.task_type,
            "language": self.language,
            "status": self.status,
            "scores": self.scores,
            "metric": self.metric,
            "final_diagnostics": self.final_diagnostics,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SampleRecord:
        return cls(**d)


@dataclass
class RunResult:
    run_id: str
    mode: str
    max_iterations: int
    config_hash: str
    template_hash: str
    dataset_hash: str
    records: list[SampleRecord]
    episodes: dict[str, EpisodeState] = field(default_factory=dict, repr=False)
    timing: dict = field(default_factory=dict)

    @property
    def scored(self) -> list[SampleRecord]:
        return [r for r in self.records if r.status == "scored"]

    @property
    def failed(self) -> list[SampleRecord]:
        return [r for r in self.records if r.status != "scored"]

    @property
    def iterative(self) -> bool:
        return AgentConfig(mode=self.mode, max_iterations=self.max_iterations).spec.iterative

    def to_dict(self) -> dict:
        """Deterministic view; wall-clock timing is kept out on purpose."""
        table = aggregate(self) if self.scored else None
        return {
            "run_id": self.run_id,
            "mode": self.mode,
            "max_iterations": self.max_iterations,
            "config_hash": self.config_hash,
            "template_hash": self.template_hash,
            "dataset_hash": self.dataset_hash,
            "records": [r.to_dict() for r in self.records],
            "aggregate": table.to_dict() if table else None,
            "failed_count": len(self.failed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> RunResult:
        return cls(
            run_id=d["run_id"],
            mode=d["mode"],
            max_iterations=d["max_iterations"],
            config_hash=d["config_hash"],
            template_hash=d["template_hash"],
            dataset_hash=d["dataset_hash"],
            records=[SampleRecord.from_dict(r) for r in d["records"]],
        )


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n"


def save_run(run: RunResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(_dumps(run.to_dict()), encoding="utf-8")
    (out / "timing.json").write_text(_dumps(run.timing), encoding="utf-8")
    with open(out / "traces.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for r in run.records:
            if r.sample_id in run.episodes:
                fh.write(episode_to_json(run.episodes[r.sample_id]) + "\n")
    with open(out / "scores.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for r in run.records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
    if run.scored:
        table = aggregate(run)
        (out / "aggregate.csv").write_text(table.to_csv(), encoding="utf-8")
        (out / "report.txt").write_text(format_report(run), encoding="utf-8")
        if run.iterative:
            (out / "curve.csv").write_text(curve_to_csv(iteration_curve(run)), encoding="utf-8")


def load_run(run_dir: str | Path) -> RunResult:
    run_dir = Path(run_dir)
    path = run_dir / "result.json"
    if not path.is_file():
        raise FileNotFoundError(f"no result.json in {run_dir}")
    run = RunResult.from_dict(json.loads(path.read_text(encoding="utf-8")))
    traces = run_dir / "traces.jsonl"
    if traces.is_file():
        with open(traces, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    st = EpisodeState.from_dict(json.loads(line))
                    run.episodes[st.sample_id] = st
    timing = run_dir / "timing.json"
    if timing.is_file():
        run.timing = json.loads(timing.read_text(encoding="utf-8"))
    return run


# -- checkpoint ------------------------------------------------------------------------


class Checkpoint:
    """Append-only log of completed samples in ``<out_dir>/checkpoint.jsonl``."""

    def __init__(self, path: Path, run_id: str, config_hash: str):
        self.path = path
        self.run_id = run_id
        self.config_hash = config_hash
        self._lock = threading.Lock()
        self.completed: dict[str, tuple[SampleRecord, EpisodeState]] = {}
        if path.exists():
            self._load()

    def _load(self):
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError:
                    # a torn final line from an interrupted write
                    logger.warning("ignoring unreadable checkpoint line in %s", self.path)
                    continue
                if entry.get("config_hash") != self.config_hash:
                    raise ValueError(
                        f"{self.path} belongs to a run with a different configuration; use a fresh out dir"
                    )
                rec = SampleRecord.from_dict(entry["record"])
                self.completed[rec.sample_id] = (rec, EpisodeState.from_dict(entry["episode"]))

    @property
    def completed_ids(self) -> set[str]:
        return set(self.completed)

    def add(self, record: SampleRecord, episode: EpisodeState) -> None:
        line = json.dumps(
            {"run_id": self.run_id, "config_hash": self.config_hash,
             "record": record.to_dict(), "episode": episode.to_dict()},
            sort_keys=True, ensure_ascii=False,
        )
        with self._lock:
            with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self.completed[record.sample_id] = (record, episode)


# -- running -----------------------------------------------------------------------------


def config_hash(config: AgentConfig, taxonomy: Taxonomy, tau: float) -> str:
    rules = [(r.pattern.pattern, r.category.value, r.verdict.value) for r in taxonomy.rules]
    blob = json.dumps({"agent": config.to_dict(), "taxonomy": rules, "tau": tau}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _score_episode(sample: Sample, state: EpisodeState, tau: float) -> SampleRecord:
    scores = [score_answer(sample, a, tau=tau) for a in state.answers]
    return SampleRecord(
        sample_id=sample.id,
        task_type=sample.task_type,
        language=sample.language,
        status="scored",
        scores=[s.value for s in scores],
        metric=scores[-1].metric,
        final_diagnostics=_jsonable(scores[-1].diagnostics),
    )


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=str))


def run_benchmark(
    dataset: Sequence[Sample] | str | Path,
    config: AgentConfig,
    backend: ModelBackend,
    out_dir: str | Path,
    *,
    taxonomy: Taxonomy | None = None,
    tau: float = 0.5,
    workers: int = 1,
    run_id: str | None = None,
    resume: bool = True,
) -> RunResult:
    """Run every sample, checkpointing after each, and persist the result.

    Samples already in the checkpoint of ``out_dir`` are not re-executed.
    Backend and image failures are recorded as failed samples and left out
    of the aggregates. Output does not depend on ``workers``.
    """
    if isinstance(dataset, (str, Path)):
        dataset = load_dataset(dataset)
    samples = list(dataset)
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise DatasetFormatError("dataset has duplicate sample ids")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"{out} is not writable")

    taxonomy = taxonomy or default_taxonomy()
    bundle = load_templates(config.template_set)
    chash = config_hash(config, taxonomy, tau)
    dhash = dataset_hash(samples)
    run_id = run_id or hashlib.sha256(f"{chash}:{dhash}".encode()).hexdigest()[:16]

    ckpt_path = out / "checkpoint.jsonl"
    if not resume and ckpt_path.exists():
        ckpt_path.unlink()
    ckpt = Checkpoint(ckpt_path, run_id, chash)
    pending = [s for s in samples if s.id not in ckpt.completed]
    if ckpt.completed:
        logger.info("resuming %s: %d of %d samples already done", run_id, len(samples) - len(pending), len(samples))

    failures: dict[str, SampleRecord] = {}
    partial: dict[str, EpisodeState] = {}
    latencies: dict[str, float] = {}
    lock = threading.Lock()

    def work(sample: Sample) -> None:
        t0 = time.monotonic()
        try:
            image = encode_image(sample.resolve_image())
            state = run_episode(sample, config, backend, taxonomy=taxonomy, image=image)
        except (BackendError, ImageReadError, UnsupportedMediaType) as exc:
            rec = SampleRecord(sample.id, sample.task_type, sample.language, "failed",
                               error=f"{type(exc).__name__}: {exc}")
            with lock:
                failures[sample.id] = rec
                if getattr(exc, "episode", None) is not None:
                    partial[sample.id] = exc.episode
            logger.warning("sample %s failed: %s", sample.id, exc)
            return
        record = _score_episode(sample, state, tau)
        ckpt.add(record, state)
        with lock:
            latencies[sample.id] = time.monotonic() - t0

    started = time.monotonic()
    if workers <= 1:
        for s in pending:
            work(s)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for fut in [pool.submit(work, s) for s in pending]:
                fut.result()
    elapsed = time.monotonic() - started

    records, episodes = [], {}
    for s in samples:
        if s.id in ckpt.completed:
            rec, ep = ckpt.completed[s.id]
            records.append(rec)
            episodes[s.id] = ep
        else:
            records.append(failures[s.id])
            if s.id in partial:
                episodes[s.id] = partial[s.id]
    lat = list(latencies.values())
    timing = {
        "wall_clock_s": elapsed,
        "executed": len(lat),
        "resumed": len(samples) - len(pending),
        "mean_episode_s": statistics.fmean(lat) if lat else None,
        "max_episode_s": max(lat) if lat else None,
    }
    result = RunResult(run_id, config.mode, config.max_iterations, chash, bundle.digest, dhash,
                       records, episodes, timing)
    (out / "templates.json").write_text(_dumps({
        "template_set": config.template_set,
        "digest": bundle.digest,
        "system": bundle.system,
        "templates": {k: t.body for k, t in sorted(bundle.templates.items())},
    }), encoding="utf-8")
    save_run(result, out)
    return result


# -- aggregation and reports ---------------------------------------------------------


@dataclass
class AggregateTable:
    """Scores × 100 per task column plus their unweighted mean."""

    columns: list[str]
    values: dict[str, float]
    average: float
    counts: dict[str, int]
    failed: int = 0

    def to_dict(self) -> dict:
        return {"columns": self.columns, "values": self.values, "average": self.average,
                "counts": self.counts, "failed": self.failed}

    def header(self) -> list[str]:
        return [_title(c) for c in self.columns] + ["Average"]

    def row(self, digits: int = 1) -> list[str]:
        return [f"{self.values[c]:.{digits}f}" for c in self.columns] + [f"{self.average:.{digits}f}"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns + ["average", "failed"])
        w.writerow([repr(self.values[c]) for c in self.columns] + [repr(self.average), self.failed])
        return buf.getvalue()


def _title(task: str) -> str:
    return task.replace("_", " ").title()


def _ordered(tasks: Iterable[str]) -> list[str]:
    present = set(tasks)
    return [t for t in TASK_TYPES if t in present]


def aggregate(run: RunResult, *, language: str | None = None, weighting: str = "task") -> AggregateTable:
    """Per-task mean of final scores × 100 and their average.

    ``weighting="task"`` averages the task columns with equal weight;
    ``"sample"`` weights every scored sample equally instead.
    """
    scored = [r for r in run.scored if language is None or r.language == language]
    if not scored:
        raise EmptyRunError(f"run {run.run_id} has no scored samples" + (f" for language {language}" if language else ""))
    by_task: dict[str, list[float]] = {}
    for r in scored:
        by_task.setdefault(r.task_type, []).append(r.final_score)
    columns = _ordered(by_task)
    values = {t: 100.0 * statistics.fmean(by_task[t]) for t in columns}
    if weighting == "task":
        average = statistics.fmean(values.values())
    elif weighting == "sample":
        average = 100.0 * statistics.fmean(r.final_score for r in scored)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    failed = [r for r in run.failed if language is None or r.language == language]
    return AggregateTable(columns, values, average, {t: len(by_task[t]) for t in columns}, len(failed))


@dataclass
class IterationCurve:
    columns: list[str]
    # points[i][task] = mean score × 100 of answer i; "average" is the column mean
    points: list[dict[str, float]]

    def series(self, task: str) -> list[float]:
        return [p[task] for p in self.points]


def iteration_curve(run: RunResult, *, language: str | None = None) -> IterationCurve:
    if not run.iterative:
        raise NotIterativeError(f"run {run.run_id} used mode {run.mode!r}, which has no refinement rounds")
    scored = [r for r in run.scored if language is None or r.language == language]
    if not scored:
        raise EmptyRunError(f"run {run.run_id} has no scored samples")
    columns = _ordered(r.task_type for r in scored)
    points = []
    for i in range(run.max_iterations + 1):
        point = {}
        for t in columns:
            point[t] = 100.0 * statistics.fmean(r.scores[i] for r in scored if r.task_type == t)
        point["average"] = statistics.fmean(point[t] for t in columns)
        points.append(point)
    return IterationCurve(columns, points)


def curve_to_csv(curve: IterationCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration"] + curve.columns + ["average"])
    for i, p in enumerate(curve.points):
        w.writerow([i] + [repr(p[c]) for c in curve.columns] + [repr(p["average"])])
    return buf.getvalue()


@dataclass
class DeltaTable:
    columns: list[str]
    deltas: dict[str, float | None]
    average_delta: float
    paired: dict[str, float]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns + ["average"])
        w.writerow(["" if self.deltas[c] is None else repr(self.deltas[c]) for c in self.columns]
                   + [repr(self.average_delta)])
        return buf.getvalue()


def compare_runs(run_a: RunResult, run_b: RunResult, *, language: str | None = None) -> DeltaTable:
    """Deltas ``b - a`` per task and for the average, plus per-sample final-score differences."""
    if run_a.dataset_hash != run_b.dataset_hash:
        raise DatasetMismatchError(
            f"runs were made on different datasets: {run_a.dataset_hash} vs {run_b.dataset_hash}"
        )
    ta, tb = aggregate(run_a, language=language), aggregate(run_b, language=language)
    columns = _ordered(set(ta.columns) | set(tb.columns))
    deltas = {
        c: (tb.values[c] - ta.values[c]) if c in ta.values and c in tb.values else None for c in columns
    }
    a_scores = {r.sample_id: r.final_score for r in run_a.scored}
    paired = {r.sample_id: r.final_score - a_scores[r.sample_id] for r in run_b.scored if r.sample_id in a_scores}
    return DeltaTable(columns, deltas, tb.average - ta.average, paired)


def format_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(h).ljust(w) if i == 0 else str(h).rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(str(x).ljust(w) if i == 0 else str(x).rjust(w) for i, (x, w) in enumerate(zip(row, widths))))
    return "\n".join(lines) + "\n"


def format_report(run: RunResult) -> str:
    parts = [f"run {run.run_id}  mode={run.mode}  T={run.max_iterations}  "
             f"scored={len(run.scored)}  failed={len(run.failed)}\n"]
    languages = [l for l in LANGUAGES if any(r.language == l for r in run.scored)]
    for lang in languages:
        table = aggregate(run, language=lang)
        parts.append(f"\n[{lang}]\n")
        parts.append(format_table(["Method"] + table.header(), [[MODE_LABELS[run.mode]] + table.row()]))
    if len(languages) > 1:
        table = aggregate(run)
        parts.append("\n[all]\n")
        parts.append(format_table(["Method"] + table.header(), [[MODE_LABELS[run.mode]] + table.row()]))
    return "".join(parts)


def comparison_table(runs: Sequence[RunResult], *, language: str | None = None) -> tuple[list[str], list[list[str]]]:
    """One row per run in mode order, in the layout of the ablation tables."""
    order = {m: i for i, m in enumerate(MODES)}
    runs = sorted(runs, key=lambda r: order[r.mode])
    tables = [aggregate(r, language=language) for r in runs]
    columns = _ordered({c for t in tables for c in t.columns})
    header = ["Method"] + [_title(c) for c in columns] + ["Average"]
    rows = []
    for run, t in zip(runs, tables):
        cells = [f"{t.values[c]:.1f}" if c in t.values else "-" for c in columns]
        rows.append([MODE_LABELS[run.mode]] + cells + [f"{t.average:.1f}"])
    return header, rows
