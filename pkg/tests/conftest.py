import numpy as np
import pytest

from tt3d.config import CorpusConfig, ExperimentConfig, TrainConfig
from tt3d.grids import GridConfig
from tt3d.guidance import AnalyticTeacher, NoiseSchedule
from tt3d.model import ModelConfig, ModelSnapshot, init_params
from tt3d.prompts import Corpus, PromptTemplate, split_seen_unseen
from tt3d.rendering import CameraConfig


def tiny_model_config(dtype="float64") -> ModelConfig:
    """Small enough for finite differences over every parameter."""
    return ModelConfig(grid=GridConfig(levels=(2, 3), features_per_level=2),
                       embed_tokens=2, embed_dim=2, v_dim=3, dtype=dtype)


def desk_model_config(dtype="float32") -> ModelConfig:
    return ModelConfig(grid=GridConfig(levels=(4, 8, 16)), embed_tokens=2, embed_dim=8,
                       v_dim=32, dtype=dtype)


def desk_experiment(steps=10, batch=2, seed=1, **train_kw) -> ExperimentConfig:
    kw = dict(image_size=32, n_ray_samples=32, log_interval=0, eval_interval=0, lr=0.02,
              noise=NoiseSchedule(omega=1.0, weight_mode="snr_balanced"))
    kw.update(train_kw)
    train = TrainConfig(steps=steps, batch_size=batch, seed=seed, **kw)
    return ExperimentConfig(model=desk_model_config(), train=train,
                            camera=CameraConfig(shading_probs=(1.0, 0.0, 0.0)))


@pytest.fixture(scope="session")
def corpus16() -> Corpus:
    cfg = CorpusConfig()
    return Corpus(PromptTemplate(cfg.template, cfg.slots), embed_dim=8, embed_seed=0)


@pytest.fixture(scope="session")
def split16(corpus16):
    return split_seen_unseen(corpus16, 0.75, 0)


@pytest.fixture(scope="session")
def teacher16(corpus16):
    return AnalyticTeacher(corpus16)


@pytest.fixture()
def tiny_snapshot() -> ModelSnapshot:
    cfg = tiny_model_config()
    return ModelSnapshot(cfg, init_params(cfg, np.random.default_rng(0)))
