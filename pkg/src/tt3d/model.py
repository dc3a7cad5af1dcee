"""Model bundle: config, parameter initialization, snapshots, modulation.

A snapshot is the immutable unit shared by inference, evaluation and the
render service: named parameter tensors plus frozen spectral-norm vectors.
The trainer owns the only mutable copy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import Node, Tape
from .errors import ConfigError, StructuralError
from .fields import POSENC_FREQS
from .grids import GridConfig, GridParams
from .mapping import embedding_nodes, gridgen_nodes

__all__ = ["ModelConfig", "ModelSnapshot", "init_params", "compute_modulation"]

PARAM_NAMES = ("map.w1", "map.b1", "map.w2", "head.w1", "head.b1", "head.w2", "head.b2",
               "env.w", "env.b")
SN_NAMES = ("sn.map.w1", "sn.map.w2", "sn.env.w")
OFFSET_NAMES = ("offset.v", "offset.w")


@dataclass(frozen=True)
class ModelConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    embed_tokens: int = 4
    embed_dim: int = 8
    v_dim: int = 32
    hidden: int = 32
    dtype: str = "float32"

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        if self.v_dim < 1 or self.hidden < 1:
            raise ConfigError("v_dim and hidden must be positive")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def embed_shape(self) -> tuple[int, int]:
        return (self.embed_tokens, self.embed_dim)

    @property
    def flat_embed_dim(self) -> int:
        return self.embed_tokens * self.embed_dim

    @property
    def env_in_dim(self) -> int:
        return 6 * POSENC_FREQS + self.v_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"]["levels"] = list(self.grid.levels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        g = d.get("grid", {})
        grid = GridConfig(levels=tuple(g.get("levels", GridConfig.levels)),
                          features_per_level=g.get("features_per_level", 4),
                          bound=g.get("bound", 2.0))
        return cls(grid=grid, **{k: d[k] for k in ("embed_tokens", "embed_dim", "v_dim", "hidden", "dtype") if k in d})


def _fan_in_uniform(rng, fan_in, shape, dtype, gain=1.0):
    s = gain / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape).astype(dtype)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fan-in uniform weights, zero biases; the hypernet output layer is scaled
    down so fresh grids stay near zero and the density bias dominates early."""
    dt = cfg.np_dtype
    n_grid = cfg.grid.total_params
    params = {
        "map.w1": _fan_in_uniform(rng, cfg.flat_embed_dim, (cfg.flat_embed_dim, cfg.v_dim), dt),
        "map.b1": np.zeros(cfg.v_dim, dtype=dt),
        "map.w2": _fan_in_uniform(rng, cfg.v_dim, (cfg.v_dim, n_grid), dt, gain=0.1),
        "head.w1": _fan_in_uniform(rng, cfg.grid.feature_dim, (cfg.grid.feature_dim, cfg.hidden), dt),
        "head.b1": np.zeros(cfg.hidden, dtype=dt),
        "head.w2": _fan_in_uniform(rng, cfg.hidden, (cfg.hidden, 4), dt),
        "head.b2": np.zeros(4, dtype=dt),
        "env.w": _fan_in_uniform(rng, cfg.env_in_dim, (cfg.env_in_dim, 3), dt),
        "env.b": np.zeros(3, dtype=dt),
    }
    for name, dim in (("sn.map.w1", cfg.v_dim), ("sn.map.w2", n_grid), ("sn.env.w", 3)):
        u = rng.standard_normal(dim)
        params[name] = (u / np.linalg.norm(u)).astype(dt)
    return params


@dataclass
class ModelSnapshot:
    """Immutable parameter bundle used for inference and serving."""

    config: ModelConfig
    params: dict[str, np.ndarray]

    def __post_init__(self):
        missing = [n for n in PARAM_NAMES + SN_NAMES if n not in self.params]
        if missing:
            raise StructuralError(f"snapshot missing tensors: {missing}")

    def copy(self) -> "ModelSnapshot":
        return ModelSnapshot(self.config, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "ModelSnapshot":
        cfg = ModelConfig(grid=self.config.grid, embed_tokens=self.config.embed_tokens,
                          embed_dim=self.config.embed_dim, v_dim=self.config.v_dim,
                          hidden=self.config.hidden,
                          dtype="float64" if dtype == np.float64 else "float32")
        return ModelSnapshot(cfg, {k: v.astype(dtype) for k, v in self.params.items()})

    def has_offsets(self) -> bool:
        return any(n in self.params for n in OFFSET_NAMES)


def modulation_nodes(tape: Tape, snapshot_params: dict[str, Node], c_flat: Node,
                     u1: np.ndarray, u2: np.ndarray) -> tuple[Node, Node]:
    """Tape ops c -> v -> flat grids, applying finetune offsets when present."""
    v = embedding_nodes(tape, c_flat, snapshot_params["map.w1"], snapshot_params["map.b1"],
                        u1, v_offset=snapshot_params.get("offset.v"))
    flat = gridgen_nodes(tape, v, snapshot_params["map.w2"], u2,
                         w_offset=snapshot_params.get("offset.w"))
    return v, flat


def compute_modulation(snapshot: ModelSnapshot, c: np.ndarray) -> tuple[np.ndarray, GridParams]:
    """(v, grid tables) for one embedding; the once-per-prompt inference step."""
    c = np.asarray(c, dtype=snapshot.config.np_dtype)
    if c.shape != snapshot.config.embed_shape:
        raise StructuralError(f"embedding shape {c.shape} != model shape {snapshot.config.embed_shape}")
    tape = Tape()
    nodes = {k: tape.constant(v) for k, v in snapshot.params.items()}
    v, flat = modulation_nodes(tape, nodes, tape.constant(c.reshape(-1)),
                               snapshot.params["sn.map.w1"], snapshot.params["sn.map.w2"])
    return v.value, GridParams.from_flat(flat.value, snapshot.config.grid)
