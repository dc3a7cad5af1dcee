"""Retrieval-style quality metrics and the rendered-frames cost metric.

R-probability: the probability a scorer assigns to the correct prompt for a
render, averaged over fixed canonical views and prompts. R-precision is the
argmax accuracy over the same renders. The scorer is pluggable; the desk
scorer softmaxes negative squared error against the teacher's target views.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import ContractError, InputError
from .model import ModelSnapshot, compute_modulation
from .prompts import Corpus
from .rendering import CameraSample, RenderOpts, render_frame

__all__ = [
    "Scorer", "TeacherScorer", "EvalReport", "eval_cameras",
    "evaluate", "r_probability", "r_precision", "frames_per_prompt",
]


def eval_cameras(n_views: int = 4, distance: float = 2.5, elevation_deg: float = 20.0,
                 focal: float = 1.0) -> list[CameraSample]:
    """Fixed canonical orbit: azimuths evenly spaced starting at 0."""
    cams = []
    for k in range(n_views):
        az = 2.0 * math.pi * k / n_views
        cams.append(CameraSample(distance=distance, azimuth=az,
                                 elevation=math.radians(elevation_deg), focal=focal,
                                 light_pos=np.array([0.0, 0.0, 3.0])))
    return cams


class Scorer(Protocol):
    """Maps rendered views to per-view probability rows over a query set."""

    cameras: list[CameraSample]

    def probabilities(self, frames: np.ndarray, query_prompts: list[str]) -> np.ndarray:
        """(n_views, H, W, 3) renders -> (n_views, K) rows, each summing to 1."""
        ...


@dataclass
class TeacherScorer:
    """Softmax over negative total squared error to each query's target views.

    Total (not mean) squared error keeps the softmax sharp enough to separate
    prompts; argmax behavior is invariant to that monotone choice.
    """

    teacher: object
    cameras: list[CameraSample]
    hw: tuple[int, int]
    temperature: float = 1.0
    _targets: dict = field(default_factory=dict, repr=False)

    def _target(self, prompt: str, view: int) -> np.ndarray:
        key = (prompt, view)
        if key not in self._targets:
            self._targets[key] = self.teacher.target_image(prompt, self.cameras[view], self.hw)
        return self._targets[key]

    def probabilities(self, frames: np.ndarray, query_prompts: list[str]) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float64)
        n_views = frames.shape[0]
        scores = np.empty((n_views, len(query_prompts)))
        for v in range(n_views):
            for k, q in enumerate(query_prompts):
                diff = frames[v] - self._target(q, v)
                scores[v, k] = -(diff * diff).sum() / self.temperature
        scores -= scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        return e / e.sum(axis=1, keepdims=True)


@dataclass
class EvalReport:
    per_prompt: dict[str, float]
    mean_r_probability: float
    r_precision: float
    n_views: int
    query_set_id: str
    frames_per_prompt: float | None = None

    def to_json(self) -> str:
        return json.dumps({
            "mean_r_probability": self.mean_r_probability,
            "r_precision": self.r_precision,
            "n_views": self.n_views,
            "query_set_id": self.query_set_id,
            "frames_per_prompt": self.frames_per_prompt,
            "per_prompt": self.per_prompt,
        }, indent=1, sort_keys=True)


def evaluate(snapshot: ModelSnapshot, corpus: Corpus, prompts: list[str], scorer,
             opts: RenderOpts = RenderOpts(), query_prompts: list[str] | None = None,
             frames_per_prompt_value: float | None = None) -> EvalReport:
    """Render canonical views per prompt and score them against the query set."""
    query = list(query_prompts) if query_prompts is not None else list(prompts)
    missing = [p for p in prompts if p not in query]
    if missing:
        raise ContractError(f"query set must include every evaluated prompt; missing {missing}")
    per_prompt: dict[str, float] = {}
    hits = 0
    total_views = 0
    for prompt in prompts:
        modulation = compute_modulation(snapshot, corpus.embedding(prompt))
        frames = np.stack([
            render_frame(snapshot, corpus.embedding(prompt), cam, opts, modulation=modulation).rgb
            for cam in scorer.cameras
        ])
        probs = scorer.probabilities(frames, query)
        idx = query.index(prompt)
        per_prompt[prompt] = float(probs[:, idx].mean())
        hits += int((probs.argmax(axis=1) == idx).sum())  # argmax ties break low
        total_views += probs.shape[0]
    mean_rp = float(np.mean(list(per_prompt.values()))) if per_prompt else 0.0
    return EvalReport(per_prompt=per_prompt, mean_r_probability=mean_rp,
                      r_precision=hits / total_views if total_views else 0.0,
                      n_views=len(scorer.cameras),
                      query_set_id=f"{len(query)}-prompts",
                      frames_per_prompt=frames_per_prompt_value)


def r_probability(snapshot: ModelSnapshot, corpus: Corpus, prompts: list[str], scorer,
                  opts: RenderOpts = RenderOpts(),
                  query_prompts: list[str] | None = None) -> EvalReport:
    return evaluate(snapshot, corpus, prompts, scorer, opts, query_prompts)


def r_precision(snapshot: ModelSnapshot, corpus: Corpus, prompts: list[str], scorer,
                opts: RenderOpts = RenderOpts(),
                query_prompts: list[str] | None = None) -> float:
    return evaluate(snapshot, corpus, prompts, scorer, opts, query_prompts).r_precision


def frames_per_prompt(iterations: int, batch: int, n_prompts: int) -> float:
    """Training cost: iterations * batch / prompt count."""
    if n_prompts <= 0:
        raise InputError("n_prompts must be positive")
    return iterations * batch / n_prompts
