"""Experiment configuration: one JSON document drives a whole run.

Nested dataclasses keep the pieces typed; to_dict/from_dict give a canonical
JSON form whose digest guards checkpoint/config pairing.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

from .errors import ConfigError
from .guidance import NoiseSchedule, TeacherConfig
from .model import ModelConfig
from .rendering import CameraConfig

__all__ = ["InterpolationSpec", "TrainConfig", "ExperimentConfig", "config_digest"]


@dataclass(frozen=True)
class InterpolationSpec:
    """How (and whether) training amortizes over prompt interpolants.

    mode: none | latent | loss | guidance.
    schedule: (steps, kappa) phases; a None step count means 'the rest'.
    kappa is the two-category Dirichlet concentration for the interpolant
    weight: 1 = uniform, 0 = endpoints only, large = midpoint-heavy.
    """

    mode: str = "none"
    schedule: tuple[tuple[int | None, float], ...] = ((5000, 2.0), (None, 0.5))

    def __post_init__(self):
        if self.mode not in ("none", "latent", "loss", "guidance"):
            raise ConfigError(f"unknown interpolation mode {self.mode!r}")
        if len(self.schedule) == 0:
            raise ConfigError("interpolation schedule cannot be empty")
        for steps, kappa in self.schedule:
            if kappa < 0:
                raise ConfigError("kappa must be >= 0")
            if steps is not None and steps <= 0:
                raise ConfigError("phase lengths must be positive")

    def kappa_at(self, step: int) -> float:
        remaining = step
        for steps, kappa in self.schedule:
            if steps is None or remaining < steps:
                return kappa
            remaining -= steps
        return self.schedule[-1][1]


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 4
    lr: float = 0.1
    beta1: float = 0.0
    beta2: float = 0.999
    adam_eps: float = 1e-8
    n_ray_samples: int = 32
    image_size: int = 64
    opacity_weight: float = 0.0
    orientation_weight: float = 0.0
    seed: int = 0
    log_interval: int = 50
    eval_interval: int = 0       # 0 = evaluate only at the end
    eval_views: int = 4
    finetune_offset: str = "v"   # v | w: where the finetune offset lives
    interpolation: InterpolationSpec = field(default_factory=InterpolationSpec)
    noise: NoiseSchedule = field(default_factory=NoiseSchedule)

    def __post_init__(self):
        if not (0.0 <= self.beta1 <= 0.95):
            raise ConfigError(f"beta1 must be in [0, 0.95], got {self.beta1}")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.finetune_offset not in ("v", "w"):
            raise ConfigError("finetune_offset must be 'v' or 'w'")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be >= 1 and steps >= 0")


@dataclass(frozen=True)
class CorpusConfig:
    template: str = "a {animal} {theme}"
    slots: tuple[tuple[str, tuple[str, ...]], ...] = (
        ("animal", ("blob", "spider", "snake", "bird")),
        ("theme", ("in red", "in green", "in blue", "in gold")),
    )
    embed_dim: int = 8
    embed_seed: int = 0
    seen_fraction: float = 0.75
    split_seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["corpus"]["slots"] = {name: list(vals) for name, vals in self.corpus.slots}
        d["model"]["grid"]["levels"] = list(self.model.grid.levels)
        d["train"]["interpolation"]["schedule"] = [list(p) for p in self.train.interpolation.schedule]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        def sub(name, builder, **fixups):
            raw = dict(d.get(name, {}))
            raw.update(fixups)
            return builder(raw)

        def build_train(raw):
            if "interpolation" in raw:
                ir = dict(raw["interpolation"])
                ir["schedule"] = tuple((None if s is None else int(s), float(k))
                                       for s, k in ir.get("schedule", [[5000, 2.0], [None, 0.5]]))
                raw["interpolation"] = InterpolationSpec(**ir)
            if "noise" in raw:
                raw["noise"] = NoiseSchedule(**raw["noise"])
            return TrainConfig(**raw)

        def build_corpus(raw):
            if "slots" in raw:
                raw["slots"] = tuple((name, tuple(vals)) for name, vals in raw["slots"].items())
            return CorpusConfig(**raw)

        try:
            return cls(
                model=ModelConfig.from_dict(d.get("model", {})),
                train=build_train(dict(d.get("train", {}))),
                corpus=build_corpus(dict(d.get("corpus", {}))),
                teacher=TeacherConfig(**d.get("teacher", {})),
                camera=sub("camera", lambda raw: CameraConfig(**_tuplify(raw))),
            )
        except TypeError as e:
            raise ConfigError(f"bad experiment config: {e}") from None

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def _tuplify(raw: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}


def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(cfg.to_json().encode()).hexdigest()
