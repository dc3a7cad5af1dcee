"""Amortized text-to-3D: one modulated radiance field across a prompt corpus.

A mapping network turns prompt embeddings into dense voxel features for a
tiny NeRF head; training distills a (pluggable, in-repo analytic) diffusion
teacher via score distillation. Inference is a single forward pass, and
prompt interpolations come for free.
"""

from .config import ExperimentConfig, InterpolationSpec, TrainConfig
from .grids import GridConfig, GridParams
from .model import ModelConfig, ModelSnapshot

__all__ = [
    "ExperimentConfig", "InterpolationSpec", "TrainConfig",
    "GridConfig", "GridParams", "ModelConfig", "ModelSnapshot",
]

__version__ = "0.1.0"
