"""Hypernetwork from prompt embeddings to grid modulations.

Two linear maps: flatten(c) -> v (SiLU, with bias) and v -> flat grid
parameters (no bias, so the grids vanish when v does). Both weights are
spectrally normalized at read time from raw stored weights; the persistent
power-iteration vector u is advanced only by the trainer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Node, Tape
from .errors import InputError, StructuralError
from .grids import GridConfig, GridParams

__all__ = [
    "SpectralNormState", "MapNetParams", "spectral_normalize",
    "spectral_weight_node", "map_embedding", "generate_grid_params",
    "interpolate_embeddings",
]

SIGMA_FLOOR = 1e-12


@dataclass
class SpectralNormState:
    """Persistent left singular-vector estimate for one weight matrix."""

    u: np.ndarray
    n_iters: int = 1
    degenerate: bool = False  # set when the matrix was too close to zero to normalize

    def __post_init__(self):
        n = np.linalg.norm(self.u)
        if n > 0:
            self.u = self.u / n


CONVERGE_AT = 20          # n_iters at or above this means verification mode
_MAX_SWEEPS = 5000


def spectral_normalize(w: np.ndarray, state: SpectralNormState,
                       n_iters: int | None = None) -> tuple[np.ndarray, SpectralNormState]:
    """Divide w by a power-iteration estimate of its top singular value.

    w is any (m, n) matrix with state.u in R^m. Each iteration refreshes
    v = normalize(w^T u) then u = normalize(w v); sigma_hat = u^T w v. The
    returned state carries the advanced u. A near-zero matrix comes back
    unchanged with the degenerate flag set.

    Training uses n_iters = 1 with the persistent u. Verification mode
    (n_iters >= 20) iterates at least n_iters times and then continues until
    sigma_hat is stationary: a fixed iteration count cannot meet tight
    tolerances when the top singular values nearly coincide.
    """
    if w.ndim != 2:
        raise StructuralError("spectral_normalize expects a matrix")
    if state.u.shape != (w.shape[0],):
        raise StructuralError(f"state u has shape {state.u.shape}, expected ({w.shape[0]},)")
    iters = state.n_iters if n_iters is None else n_iters
    converge = iters >= CONVERGE_AT
    u, v = state.u, None
    sigma_prev = None
    sweeps = 0
    while True:
        tv = w.T @ u
        n = np.linalg.norm(tv)
        if n < SIGMA_FLOOR:
            return w, SpectralNormState(u=u, n_iters=state.n_iters, degenerate=True)
        v = tv / n
        wv = w @ v
        n = np.linalg.norm(wv)
        if n < SIGMA_FLOOR:
            return w, SpectralNormState(u=u, n_iters=state.n_iters, degenerate=True)
        u = wv / n
        sweeps += 1
        if sweeps < max(iters, 1):
            continue
        sigma = float(u @ (w @ v))
        if not converge:
            break
        if sigma_prev is not None and abs(sigma - sigma_prev) <= 1e-13 * max(1.0, sigma):
            break
        if sweeps >= _MAX_SWEEPS:
            break
        sigma_prev = sigma
    sigma = float(u @ (w @ v))
    if sigma < SIGMA_FLOOR:
        return w, SpectralNormState(u=u, n_iters=state.n_iters, degenerate=True)
    return w / sigma, SpectralNormState(u=u, n_iters=state.n_iters, degenerate=False)


def power_iterate(w: np.ndarray, u: np.ndarray, n_iters: int = 1) -> np.ndarray:
    """Advance the left power-iteration vector for w (m, n), u in R^m."""
    for _ in range(n_iters):
        tv = w.T @ u
        n = np.linalg.norm(tv)
        if n < SIGMA_FLOOR:
            return u
        v = tv / n
        wv = w @ v
        n = np.linalg.norm(wv)
        if n < SIGMA_FLOOR:
            return u
        u = wv / n
    return u


def spectral_weight_node(tape: Tape, w: Node, u: np.ndarray) -> Node:
    """Tape-side W / sigma_hat with sigma_hat = ||W u||, u held constant.

    Stored weights use the (in, out) orientation, so the persistent u (which
    lives in the layer's output space) multiplies from the right. sigma_hat
    is on the tape: gradients see the normalization, while the power
    iteration itself stays outside (u advances only in the trainer).
    """
    sigma_hat = tape.norm2(tape.matmul(w, tape.constant(u)))
    if float(sigma_hat.value) < SIGMA_FLOOR:
        return w
    return tape.mul(w, tape.recip(sigma_hat))


def embedding_nodes(tape: Tape, c_flat: Node, w1: Node, b1: Node, u1: np.ndarray,
                    v_offset: Node | None = None) -> Node:
    """v = SiLU(spectral_norm(W1) applied to flattened c, plus bias) [+ offset]."""
    v = tape.silu(tape.add(tape.matmul(c_flat, spectral_weight_node(tape, w1, u1)), b1))
    if v_offset is not None:
        v = tape.add(v, v_offset)
    return v


def gridgen_nodes(tape: Tape, v: Node, w2: Node, u2: np.ndarray,
                  w_offset: Node | None = None) -> Node:
    """Flat grid parameters = spectral_norm(W2) applied to v; no bias by design."""
    flat = tape.matmul(v, spectral_weight_node(tape, w2, u2))
    if w_offset is not None:
        flat = tape.add(flat, w_offset)
    return flat


@dataclass
class MapNetParams:
    """Raw (unnormalized) mapping-network weights, (in, out) orientation."""

    w1: np.ndarray        # (flat_embed_dim, v_dim), with bias
    b1: np.ndarray        # (v_dim,)
    w2: np.ndarray        # (v_dim, total_grid_params), no bias
    u1: np.ndarray        # (v_dim,) spectral-norm state for w1
    u2: np.ndarray        # (total_grid_params,) spectral-norm state for w2
    embed_shape: tuple[int, int] = (4, 8)

    @property
    def v_dim(self) -> int:
        return self.w1.shape[1]

    def validate(self, grid_cfg: GridConfig | None = None):
        flat = self.embed_shape[0] * self.embed_shape[1]
        if self.w1.shape[0] != flat:
            raise StructuralError(f"w1 expects flattened embedding of {self.w1.shape[0]}, corpus gives {flat}")
        if self.b1.shape != (self.v_dim,):
            raise StructuralError("b1 shape mismatch")
        if self.w2.shape != (self.v_dim, self.u2.shape[0]):
            raise StructuralError("w2 / u2 shape mismatch")
        if self.u1.shape != (self.v_dim,):
            raise StructuralError("u1 shape mismatch")
        if grid_cfg is not None and self.w2.shape[1] != grid_cfg.total_params:
            raise StructuralError(
                f"w2 outputs {self.w2.shape[1]} grid values, config wants {grid_cfg.total_params}")


def _check_embedding(c: np.ndarray, shape: tuple[int, int]):
    if c.shape != tuple(shape):
        raise StructuralError(f"embedding shape {c.shape} != corpus shape {tuple(shape)}")
    if not np.all(np.isfinite(c)):
        raise StructuralError("non-finite embedding")


def map_embedding(c, params: MapNetParams) -> np.ndarray:
    """Modulation vector v for a prompt embedding (deterministic given params)."""
    c = np.asarray(c)
    _check_embedding(c, params.embed_shape)
    tape = Tape()
    v = embedding_nodes(tape, tape.constant(c.reshape(-1)),
                        tape.constant(params.w1), tape.constant(params.b1), params.u1)
    return v.value


def generate_grid_params(v, params: MapNetParams, grid_cfg: GridConfig) -> GridParams:
    """Grid tables from a modulation vector; linear and bias-free (v = 0 -> zero grids)."""
    v = np.asarray(v)
    if v.shape != (params.v_dim,):
        raise StructuralError(f"v has shape {v.shape}, expected ({params.v_dim},)")
    params.validate(grid_cfg)
    tape = Tape()
    flat = gridgen_nodes(tape, tape.constant(v), tape.constant(params.w2), params.u2)
    return GridParams.from_flat(flat.value, grid_cfg)


def interpolate_embeddings(c1, c2, alpha: float) -> np.ndarray:
    """Elementwise convex combination (1 - alpha) c1 + alpha c2."""
    c1 = np.asarray(c1)
    c2 = np.asarray(c2)
    if c1.shape != c2.shape:
        raise StructuralError(f"embedding shapes differ: {c1.shape} vs {c2.shape}")
    if not (0.0 <= float(alpha) <= 1.0):
        raise InputError(f"alpha must be in [0, 1], got {alpha}")
    alpha = float(alpha)
    if alpha == 0.0:
        return c1.copy()
    if alpha == 1.0:
        return c2.copy()
    return (1.0 - alpha) * c1 + alpha * c2
