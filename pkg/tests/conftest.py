from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest

from ocr_agent.backend import ScriptedBackend, encode_image
from ocr_agent.bench import Sample, load_dataset

FIXTURES = Path(__file__).parent / "fixtures"


def make_sample(sid="s1", task="recognition", gold=("EXIT",), question="What does the sign say?", **kw) -> Sample:
    return Sample(
        id=sid,
        image_ref=str(FIXTURES / "tiny.png"),
        question=question,
        task_type=task,
        language=kw.pop("language", "en"),
        gold=list(gold) if isinstance(gold, tuple) else gold,
        **kw,
    )


def scripted(sample_ids, T, answers=None, reflect=None) -> ScriptedBackend:
    """Mock backend with one transcript per sample.

    ``answers[sid]`` lists A_0..A_T; ``reflect(sid, i)`` builds reflection i.
    """
    answers = answers or {}
    reflect = reflect or (lambda sid, i: f"Reflection {i} for {sid}: the answer missed a detail.\n"
                                         f"STEP: re-read line {i} of the image")
    table = {}
    for sid in sample_ids:
        seq = answers.get(sid, [f"answer-{sid}-{k}" for k in range(T + 1)])
        table[(sid, "initial", 0)] = f"ANSWER: {seq[0]}"
        for i in range(1, T + 1):
            table[(sid, "reflect", i)] = reflect(sid, i)
            table[(sid, "refine", i)] = f"ANSWER: {seq[i]}"
    return ScriptedBackend(table)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def tiny_image():
    return encode_image(FIXTURES / "tiny.png")


@pytest.fixture
def en_dataset(tmp_path) -> Path:
    """Copy of the five-sample English fixture with its image and mock transcript."""
    for name in ("en.jsonl", "en.mock.jsonl", "tiny.png"):
        shutil.copy(FIXTURES / name, tmp_path / name)
    return tmp_path / "en.jsonl"


@pytest.fixture
def en_samples(en_dataset):
    return load_dataset(en_dataset)


@pytest.fixture
def en_backend(en_dataset):
    return ScriptedBackend.from_file(en_dataset.with_name("en.mock.jsonl"))


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(l) for l in fh if l.strip()]


def load_capability_corpus():
    """Hand-labeled ``(verdict, category, phrase)`` rows."""
    rows = []
    with open(FIXTURES / "capability_corpus.tsv", encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and not line.startswith("#"):
                rows.append(tuple(line.rstrip("\n").split("\t")))
    return rows


# -- acceptance reporting ----------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call" and not (report.when == "setup" and report.skipped):
        return
    number, title = marker.args
    status = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
    _CRITERIA[number] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2} {status}: {title}")
