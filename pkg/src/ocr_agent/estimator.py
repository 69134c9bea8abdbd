"""scikit-learn style wrapper around the episode loop.

``OCRAgent`` follows the estimator protocol: hyper-parameters are plain
constructor arguments (so ``get_params``/``set_params``/``clone`` work),
``fit`` only validates and resolves them because the method is
training-free, and ``predict``/``score`` consume a list of samples.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .agent import AgentConfig, EpisodeState, run_episode
from .backend import GenerationParams, ModelBackend
from .bench import RunResult, Sample, SampleRecord, aggregate, load_dataset, parse_sample, score_answer
from .capability import load_taxonomy
from .templates import load_templates


def check_samples(X) -> list[Sample]:
    """Accept a dataset path, a list of Sample, or a list of sample dicts."""
    if isinstance(X, (str, Path)):
        return load_dataset(X)
    if isinstance(X, Sample):
        X = [X]
    samples = []
    for i, x in enumerate(X):
        if isinstance(x, Sample):
            samples.append(x)
        elif isinstance(x, dict):
            try:
                samples.append(parse_sample(x))
            except ValueError as exc:
                raise ValueError(f"sample {i}: {exc}") from exc
        else:
            raise TypeError(f"sample {i}: expected Sample or dict, got {type(x).__name__}")
    if not samples:
        raise ValueError("no samples given")
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids must be unique")
    return samples


class OCRAgent(BaseEstimator):
    def __init__(
        self,
        backend: ModelBackend | None = None,
        mode: str = "full",
        max_iterations: int | None = None,
        template_set: str = "default",
        taxonomy: str | None = None,
        temperature: float = 0.0,
        max_tokens: int = 1024,
        seed: int | None = 0,
        memory_char_budget: int | None = None,
        tau: float = 0.5,
        n_jobs: int = 1,
    ):
        self.backend = backend
        self.mode = mode
        self.max_iterations = max_iterations
        self.template_set = template_set
        self.taxonomy = taxonomy
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.seed = seed
        self.memory_char_budget = memory_char_budget
        self.tau = tau
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        if self.backend is None:
            raise ValueError("OCRAgent needs a backend")
        if X is not None:
            check_samples(X)
        self.config_ = AgentConfig(
            mode=self.mode,
            max_iterations=self.max_iterations,
            template_set=self.template_set,
            generation=GenerationParams(self.temperature, self.max_tokens, self.seed),
            memory_char_budget=self.memory_char_budget,
        )
        self.taxonomy_ = load_taxonomy(self.taxonomy)
        self.templates_ = load_templates(self.template_set)
        return self

    def _episodes(self, samples: Sequence[Sample]) -> list[EpisodeState]:
        def one(s):
            return run_episode(s, self.config_, self.backend, taxonomy=self.taxonomy_)

        if self.n_jobs <= 1:
            return [one(s) for s in samples]
        with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
            return list(pool.map(one, samples))

    def predict_episodes(self, X) -> list[EpisodeState]:
        check_is_fitted(self, "config_")
        return self._episodes(check_samples(X))

    def predict(self, X) -> np.ndarray:
        """Final answer of each sample."""
        return np.array([ep.final_answer for ep in self.predict_episodes(X)], dtype=object)

    def score(self, X, y=None) -> float:
        """Task-averaged final score in [0, 1] (the "Average" column divided by 100)."""
        samples = check_samples(X)
        episodes = self.predict_episodes(samples)
        records = []
        for s, ep in zip(samples, episodes):
            scores = [score_answer(s, a, tau=self.tau).value for a in ep.answers]
            records.append(SampleRecord(s.id, s.task_type, s.language, "scored", scores))
        run = RunResult("estimator", self.config_.mode, self.config_.max_iterations, "", "", "", records)
        return aggregate(run).average / 100.0
