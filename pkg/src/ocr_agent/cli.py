"""Command-line entry point: ``ocr-agent {run,report,validate,score}``.

Settings resolve in the order flag > environment (``OCR_AGENT_<KEY>``) >
YAML config file (``--config``) > built-in default.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from .agent import MODES, AgentConfig
from .backend import GenerationParams, HttpBackend, ScriptedBackend, echo_responder
from .bench import (
    MODE_LABELS,
    RunResult,
    SampleRecord,
    aggregate,
    compare_runs,
    curve_to_csv,
    dataset_hash,
    format_report,
    format_table,
    iteration_curve,
    load_run,
    run_benchmark,
    score_answer,
    validate_dataset,
)
from .capability import load_taxonomy
from .errors import ConfigError, DatasetMismatchError, EmptyRunError, NotIterativeError, OCRAgentError

logger = logging.getLogger("ocr_agent")

ENV_PREFIX = "OCR_AGENT_"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


@dataclass(frozen=True)
class CliConfig:
    dataset: str | None = None
    out: str | None = None
    mode: str = "full"
    max_iterations: int | None = None
    backend: str = "http"
    base_url: str = "http://localhost:8000/v1"
    model: str = "reducto/RolmOCR"
    api_key: str | None = None
    timeout: float = 120.0
    max_retries: int = 3
    max_in_flight: int = 4
    workers: int = 1
    tau: float = 0.5
    strict: bool = True
    template_set: str = "default"
    taxonomy: str | None = None
    mock_fixture: str | None = None
    temperature: float = 0.0
    seed: int | None = 0
    max_tokens: int = 1024
    memory_char_budget: int | None = None

    def snapshot(self) -> dict:
        """Everything needed to repeat the run, minus secrets."""
        d = asdict(self)
        d.pop("api_key")
        return d

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            mode=self.mode,
            max_iterations=self.max_iterations,
            template_set=self.template_set,
            generation=GenerationParams(self.temperature, self.max_tokens, self.seed),
            memory_char_budget=self.memory_char_budget,
        )


_FIELDS = {f.name: f for f in fields(CliConfig)}
_OPTIONAL_INT = {"max_iterations", "seed", "memory_char_budget"}
_OPTIONAL_STR = {"dataset", "out", "api_key", "taxonomy", "mock_fixture"}


def _coerce(key: str, value: Any) -> Any:
    if value is None:
        return None
    default = _FIELDS[key].default
    if key in _OPTIONAL_INT:
        if isinstance(value, str) and value.strip().lower() in ("", "none", "null"):
            return None
        return int(value)
    if key in _OPTIONAL_STR:
        return str(value)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        s = str(value).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


def resolve_config(
    flags: Mapping[str, Any],
    env: Mapping[str, str] | None = None,
    file_values: Mapping[str, Any] | None = None,
) -> CliConfig:
    """Merge the layers; a ``None`` flag means "not given"."""
    env = os.environ if env is None else env
    file_values = dict(file_values or {})
    unknown = set(file_values) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    values = {}
    for key in _FIELDS:
        try:
            if flags.get(key) is not None:
                values[key] = _coerce(key, flags[key])
            elif ENV_PREFIX + key.upper() in env:
                values[key] = _coerce(key, env[ENV_PREFIX + key.upper()])
            elif key in file_values:
                values[key] = _coerce(key, file_values[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    cfg = CliConfig(**values)
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown mode {cfg.mode!r}")
    if cfg.backend not in ("http", "mock"):
        raise ConfigError(f"unknown backend {cfg.backend!r}; expected http or mock")
    if not 0 <= cfg.tau < 1:
        raise ConfigError("tau must lie in [0, 1)")
    cfg.agent_config()  # raises on inconsistent mode / iteration settings
    return cfg


def read_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def build_backend(cfg: CliConfig):
    if cfg.backend == "mock":
        fixture = cfg.mock_fixture
        if fixture is None and cfg.dataset:
            sibling = Path(cfg.dataset).with_suffix(".mock.jsonl")
            fixture = str(sibling) if sibling.is_file() else None
        if fixture:
            return ScriptedBackend.from_file(fixture, fallback=echo_responder)
        return ScriptedBackend(fallback=echo_responder)
    return HttpBackend(
        cfg.base_url, cfg.model, cfg.api_key,
        timeout=cfg.timeout, max_retries=cfg.max_retries, max_in_flight=cfg.max_in_flight,
    )


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    # defaults stay None so unset flags fall through to env / file / built-in
    p.add_argument("--config", help="YAML file of settings")
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--backend", choices=("http", "mock"))
    p.add_argument("--base-url", dest="base_url")
    p.add_argument("--model")
    p.add_argument("--api-key", dest="api_key")
    p.add_argument("--timeout", type=float)
    p.add_argument("--max-retries", dest="max_retries", type=int)
    p.add_argument("--max-in-flight", dest="max_in_flight", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--strict", dest="strict", action="store_const", const=True)
    p.add_argument("--no-strict", dest="strict", action="store_const", const=False)
    p.add_argument("--template-set", dest="template_set")
    p.add_argument("--taxonomy")
    p.add_argument("--mock-fixture", dest="mock_fixture")
    p.add_argument("--temperature", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-tokens", dest="max_tokens", type=int)
    p.add_argument("--memory-char-budget", dest="memory_char_budget", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ocr-agent", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    run = sub.add_parser("run", help="run episodes over a dataset")
    _add_run_flags(run)
    run.add_argument("--fresh", action="store_true", help="ignore an existing checkpoint")

    report = sub.add_parser("report", help="print the tables of a finished run")
    report.add_argument("run_dir")
    report.add_argument("--curves", action="store_true", help="per-iteration averages")
    report.add_argument("--compare", metavar="OTHER_RUN", help="deltas of OTHER_RUN minus run_dir")
    report.add_argument("--language", choices=("en", "zh"))
    report.add_argument("--format", choices=("table", "json", "csv"), default="table")

    validate = sub.add_parser("validate", help="check a dataset file")
    validate.add_argument("dataset")

    score = sub.add_parser("score", help="score externally produced answers")
    score.add_argument("--dataset", required=True)
    score.add_argument("--predictions", required=True, help="JSONL of {id, answer} or a JSON object id -> answer")
    score.add_argument("--tau", type=float, default=0.5)
    score.add_argument("--format", choices=("table", "json", "csv"), default="table")
    return parser


def cmd_run(args) -> int:
    flags = {k: getattr(args, k, None) for k in _FIELDS}
    try:
        cfg = resolve_config(flags, os.environ, read_config_file(args.config))
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"ocr-agent run: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not cfg.dataset or not cfg.out:
        missing = " and ".join(k for k in ("dataset", "out") if not getattr(cfg, k))
        print(f"ocr-agent run: {missing} must be set (flag, {ENV_PREFIX}* variable or config file)", file=sys.stderr)
        return EXIT_USAGE
    try:
        from .bench import load_dataset

        samples = load_dataset(cfg.dataset, strict=cfg.strict)
        taxonomy = load_taxonomy(cfg.taxonomy)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.yaml").write_text(yaml.safe_dump(cfg.snapshot(), sort_keys=True), encoding="utf-8")
        backend = build_backend(cfg)
        result = run_benchmark(samples, cfg.agent_config(), backend, out, taxonomy=taxonomy,
                               tau=cfg.tau, workers=cfg.workers, resume=not args.fresh)
        if isinstance(backend, ScriptedBackend):
            with open(out / "captured.jsonl", "w", encoding="utf-8", newline="\n") as fh:
                for c in sorted(backend.captured, key=lambda c: (c.sample_id, c.iteration, c.kind != "reflect")):
                    fh.write(json.dumps(c.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
    except (OCRAgentError, OSError, ValueError) as exc:
        print(f"ocr-agent run: aborted: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if result.scored:
        print(format_report(result), end="")
    if result.failed:
        print(f"{len(result.failed)} sample(s) failed and were excluded from the averages:", file=sys.stderr)
        for r in result.failed:
            print(f"  {r.sample_id}: {r.error}", file=sys.stderr)
    print(f"run directory: {cfg.out}")
    return EXIT_OK


def _emit_table(header, rows, fmt: str, payload: dict) -> None:
    if fmt == "json":
        print(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False))
    elif fmt == "csv":
        import csv

        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    else:
        print(format_table(header, rows), end="")


def cmd_report(args) -> int:
    try:
        run = load_run(args.run_dir)
        if args.compare:
            other = load_run(args.compare)
            delta = compare_runs(run, other, language=args.language)
            header = ["Delta"] + [c.replace("_", " ").title() for c in delta.columns] + ["Average"]
            row = [f"{MODE_LABELS[other.mode]} - {MODE_LABELS[run.mode]}"]
            row += ["-" if delta.deltas[c] is None else f"{delta.deltas[c]:+.1f}" for c in delta.columns]
            row.append(f"{delta.average_delta:+.1f}")
            payload = {"columns": delta.columns, "deltas": delta.deltas,
                       "average_delta": delta.average_delta, "paired": delta.paired}
            _emit_table(header, [row], args.format, payload)
        elif args.curves:
            curve = iteration_curve(run, language=args.language)
            if args.format == "csv":
                print(curve_to_csv(curve), end="")
            else:
                header = ["Iteration"] + [c.replace("_", " ").title() for c in curve.columns] + ["Average"]
                rows = [[str(i)] + [f"{p[c]:.1f}" for c in curve.columns] + [f"{p['average']:.1f}"]
                        for i, p in enumerate(curve.points)]
                _emit_table(header, rows, args.format, {"columns": curve.columns, "points": curve.points})
        else:
            table = aggregate(run, language=args.language)
            header = ["Method"] + table.header()
            _emit_table(header, [[MODE_LABELS[run.mode]] + table.row()], args.format, table.to_dict())
            if table.failed:
                print(f"({table.failed} failed sample(s) excluded)", file=sys.stderr)
    except FileNotFoundError as exc:
        print(f"ocr-agent report: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except DatasetMismatchError as exc:
        print(f"ocr-agent report: cannot compare: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except NotIterativeError as exc:
        print(f"ocr-agent report: no iteration curve: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except EmptyRunError as exc:
        print(f"ocr-agent report: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        samples, diags = validate_dataset(args.dataset)
    except OSError as exc:
        print(f"ocr-agent validate: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    for d in diags:
        print(f"{args.dataset}: {d}")
    print(f"{len(samples)} valid sample(s), {len(diags)} error(s)" if diags else f"{len(samples)} sample(s), 0 errors")
    return EXIT_OK if not diags else EXIT_FAILURE


def read_predictions(path: str) -> dict[str, str]:
    """Read ``{"id": ..., "answer": ...}`` lines, or one JSON object mapping id -> answer."""
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return {}
    try:
        whole = json.loads(text)
    except json.JSONDecodeError:
        whole = None
    if isinstance(whole, dict) and "answer" not in whole:
        return {str(k): "" if v is None else str(v) for k, v in whole.items()}
    preds = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        obj = json.loads(line)
        sid = obj.get("sample_id", obj.get("id")) if isinstance(obj, dict) else None
        if sid is None or "answer" not in obj:
            raise ValueError(f"{path}:{lineno}: expected sample_id/id and answer")
        preds[str(sid)] = "" if obj["answer"] is None else str(obj["answer"])
    return preds


def cmd_score(args) -> int:
    try:
        samples, diags = validate_dataset(args.dataset)
        if diags:
            for d in diags:
                print(f"{args.dataset}: {d}", file=sys.stderr)
            return EXIT_FAILURE
        preds = read_predictions(args.predictions)
    except (OSError, ValueError) as exc:
        print(f"ocr-agent score: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    by_id = {s.id: s for s in samples}
    unknown = sorted(set(preds) - set(by_id))
    if unknown:
        print(f"warning: {len(unknown)} unknown sample id(s): {', '.join(unknown[:10])}", file=sys.stderr)
    if not preds:
        print("warning: predictions file is empty; nothing to score", file=sys.stderr)
        if args.format == "json":
            print(json.dumps({"columns": [], "values": {}, "average": None, "coverage": 0}))
        else:
            print("(empty report)")
        return EXIT_OK
    records = []
    for s in samples:
        if s.id in preds:
            score = score_answer(s, preds[s.id], tau=args.tau)
            records.append(SampleRecord(s.id, s.task_type, s.language, "scored", [score.value], score.metric))
    if not records:
        print("warning: no prediction matches a dataset id; nothing to score", file=sys.stderr)
        print("(empty report)")
        return EXIT_OK
    run = RunResult("score", "naive", 0, "", "", dataset_hash(samples), records)
    table = aggregate(run)
    payload = dict(table.to_dict(), coverage=len(records), total=len(samples))
    _emit_table(["Method"] + table.header(), [["Predictions"] + table.row()], args.format, payload)
    if len(records) < len(samples):
        print(f"coverage: {len(records)} of {len(samples)} samples scored", file=sys.stderr)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "report": cmd_report, "validate": cmd_validate, "score": cmd_score}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
