"""Capability- and memory-reflective refinement loops for vision-language OCR."""

from .agent import (
    MODES,
    AgentConfig,
    EpisodeState,
    MemoryStore,
    ReflectionRecord,
    extract_plan,
    run_episode,
    update_memory,
)
from .backend import GenerationParams, HttpBackend, ModelRequest, ScriptedBackend, encode_image
from .bench import (
    Sample,
    aggregate,
    compare_runs,
    iteration_curve,
    load_dataset,
    run_benchmark,
    score_answer,
)
from .capability import PlanAction, classify_action, filter_plan, load_taxonomy
from .estimator import OCRAgent

__version__ = "0.1.0"

__all__ = [
    "MODES", "AgentConfig", "EpisodeState", "GenerationParams", "HttpBackend", "MemoryStore",
    "ModelRequest", "OCRAgent", "PlanAction", "ReflectionRecord", "Sample", "ScriptedBackend",
    "aggregate", "classify_action", "compare_runs", "encode_image", "extract_plan", "filter_plan",
    "iteration_curve", "load_dataset", "load_taxonomy", "run_benchmark", "run_episode",
    "score_answer", "update_memory",
]
