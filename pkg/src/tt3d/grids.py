"""Multi-resolution dense voxel point encoder.

A query point inside the bounding cube is trilinearly interpolated in every
level's feature grid; per-level features are concatenated low-to-high
resolution. The grid values themselves are not trained directly: they are
produced per prompt by the mapping network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, Tape
from .errors import ConfigError, InputError, StructuralError

__all__ = ["GridConfig", "GridParams", "trilinear_weights", "encode_point", "encode_points_node"]

_CORNER_OFFSETS = np.array(
    [(dx, dy, dz) for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)], dtype=np.int64
)


@dataclass(frozen=True)
class GridConfig:
    """Dense voxel levels over the cube circumscribing the bounding sphere."""

    levels: tuple[int, ...] = (9, 14, 22, 36, 58)
    features_per_level: int = 4
    bound: float = 2.0  # half side of the cube == bounding sphere radius

    def __post_init__(self):
        if len(self.levels) == 0:
            raise ConfigError("at least one grid level required")
        if any(r < 2 for r in self.levels):
            raise ConfigError(f"every level resolution must be >= 2, got {self.levels}")
        if any(b >= a for a, b in zip(self.levels[1:], self.levels[:-1])):
            raise ConfigError(f"level resolutions must be strictly increasing, got {self.levels}")
        if self.features_per_level < 1:
            raise ConfigError("features_per_level must be >= 1")
        if not (self.bound > 0):
            raise ConfigError("bound must be positive")

    @property
    def feature_dim(self) -> int:
        return len(self.levels) * self.features_per_level

    def level_sizes(self) -> list[int]:
        return [r ** 3 * self.features_per_level for r in self.levels]

    @property
    def total_params(self) -> int:
        return sum(self.level_sizes())


@dataclass
class GridParams:
    """Per-level feature tables, each (res**3, features_per_level)."""

    levels: list[np.ndarray] = field(default_factory=list)

    def validate(self, cfg: GridConfig):
        if len(self.levels) != len(cfg.levels):
            raise StructuralError(f"expected {len(cfg.levels)} levels, got {len(self.levels)}")
        for table, res in zip(self.levels, cfg.levels):
            want = (res ** 3, cfg.features_per_level)
            if table.shape != want:
                raise StructuralError(f"level table shape {table.shape} != {want}")
            if not np.all(np.isfinite(table)):
                raise StructuralError("non-finite grid parameters")

    @classmethod
    def zeros(cls, cfg: GridConfig, dtype=np.float64) -> "GridParams":
        return cls([np.zeros((r ** 3, cfg.features_per_level), dtype=dtype) for r in cfg.levels])

    @classmethod
    def from_flat(cls, flat: np.ndarray, cfg: GridConfig) -> "GridParams":
        if flat.size != cfg.total_params:
            raise StructuralError(f"flat parameter vector has {flat.size} entries, expected {cfg.total_params}")
        levels, start = [], 0
        for r, size in zip(cfg.levels, cfg.level_sizes()):
            levels.append(flat[start:start + size].reshape(r ** 3, cfg.features_per_level))
            start += size
        return cls(levels)


def trilinear_weights(x, res: int, bound: float = 2.0):
    """Corner indices and convex weights for points in the [-bound, bound] cube.

    x may be a single 3-vector or (..., 3). Points outside the cube are
    clamped to the boundary. Returns (indices (..., 8), weights (..., 8));
    weights are >= 0 and sum to 1, indices address the (res**3,) flat table.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 3:
        raise InputError(f"query points must have trailing dimension 3, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("non-finite query point")
    single = x.ndim == 1
    pts = x.reshape(-1, 3)
    u = np.clip((pts + bound) * ((res - 1) / (2.0 * bound)), 0.0, res - 1)
    i0 = np.minimum(u.astype(np.int64), res - 2)
    f = u - i0
    wx = np.stack([1.0 - f[:, 0], f[:, 0]], axis=1)
    wy = np.stack([1.0 - f[:, 1], f[:, 1]], axis=1)
    wz = np.stack([1.0 - f[:, 2], f[:, 2]], axis=1)
    weights = (wx[:, :, None, None] * wy[:, None, :, None] * wz[:, None, None, :]).reshape(-1, 8)
    corners = i0[:, None, :] + _CORNER_OFFSETS[None, :, :]
    indices = (corners[..., 0] * res + corners[..., 1]) * res + corners[..., 2]
    if single:
        return indices[0], weights[0]
    out_shape = x.shape[:-1] + (8,)
    return indices.reshape(out_shape), weights.reshape(out_shape)


def encode_points_node(tape: Tape, x: Node, tables: list[Node], cfg: GridConfig) -> Node:
    """Tape-recorded multi-level encoding of (..., 3) points -> (..., feature_dim)."""
    if len(tables) != len(cfg.levels):
        raise StructuralError(f"expected {len(cfg.levels)} level tables, got {len(tables)}")
    feats = [tape.gather_weighted_sum(t, x, res, -cfg.bound, cfg.bound)
             for t, res in zip(tables, cfg.levels)]
    return tape.concat(feats, axis=-1)


def encode_jacobian_x(x, params: GridParams, cfg: GridConfig) -> np.ndarray:
    """d(feature)/d(x) for (..., 3) points: (..., feature_dim, 3).

    Piecewise constant per cell along each axis (trilinear); zero where the
    query clamps to the cube boundary. Used for shading normals, which are
    treated as detached values (no second-order support on the tape).
    """
    from ._kernels import trilerp_jacobian

    x = np.asarray(x)
    pts = x.reshape(-1, 3)
    parts = []
    for table, res in zip(params.levels, cfg.levels):
        p = pts.astype(table.dtype) if pts.dtype != table.dtype else pts
        parts.append(trilerp_jacobian(table, p, res, -cfg.bound, cfg.bound))
    out = np.concatenate(parts, axis=1)
    return out.reshape(x.shape[:-1] + (cfg.feature_dim, 3))


def encode_point(x, params: GridParams, cfg: GridConfig) -> np.ndarray:
    """Feature vector for one point (or batch); forward pass of the tape op."""
    params.validate(cfg)
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InputError("non-finite query point")
    tape = Tape()
    xn = tape.constant(x)
    tables = [tape.constant(t) for t in params.levels]
    return encode_points_node(tape, xn, tables, cfg).value
