"""Radiance head, spatial density bias, and the text-conditioned background.

The head is deliberately tiny (one hidden layer, 32 units, SiLU): nearly all
capacity lives in the voxel features. Density goes through softplus after an
additive spatial bias that starts training from a centered soft sphere; color
goes through sigmoid. The environment map is a single spectrally-normalized
linear layer over a sinusoidal direction encoding concatenated with the
modulation vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Node, Tape
from .errors import StructuralError
from .mapping import spectral_weight_node

__all__ = [
    "NerfHeadParams", "RadianceSample", "EnvMapParams",
    "density_bias", "posenc", "nerf_eval", "envmap_eval",
    "radiance_nodes", "envmap_nodes",
]

HIDDEN_UNITS = 32
POSENC_FREQS = 8


@dataclass
class NerfHeadParams:
    """Single-hidden-layer MLP: features -> [density logit, rgb logits]."""

    w1: np.ndarray  # (feature_dim, 32)
    b1: np.ndarray  # (32,)
    w2: np.ndarray  # (32, 4)
    b2: np.ndarray  # (4,)

    def validate(self, feature_dim: int):
        if self.w1.shape != (feature_dim, self.b1.shape[0]):
            raise StructuralError(f"head w1 shape {self.w1.shape} does not match feature dim {feature_dim}")
        if self.w2.shape != (self.b1.shape[0], 4) or self.b2.shape != (4,):
            raise StructuralError("head output layer must map hidden -> 4")
        for a in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(a)):
                raise StructuralError("non-finite head parameters")


@dataclass
class RadianceSample:
    sigma: float
    rgb: np.ndarray  # (3,) in (0, 1)


@dataclass
class EnvMapParams:
    """Linear layer over concat(posenc(direction), v), spectral-norm state u."""

    w: np.ndarray  # (6*POSENC_FREQS + v_dim, 3)
    b: np.ndarray  # (3,)
    u: np.ndarray  # (3,) persistent left vector for the spectral norm

    def validate(self, v_dim: int):
        want = (6 * POSENC_FREQS + v_dim, 3)
        if self.w.shape != want:
            raise StructuralError(f"env map weight shape {self.w.shape} != {want}")


def density_bias(x) -> np.ndarray:
    """Additive pre-softplus density: 10 * (1 - 2 * ||x||)."""
    x = np.asarray(x, dtype=np.float64)
    return 10.0 * (1.0 - 2.0 * np.linalg.norm(x, axis=-1))


def posenc(d, freqs: int = POSENC_FREQS) -> np.ndarray:
    """Sinusoidal encoding [sin(2^k d_i), cos(2^k d_i)], k < freqs, per axis."""
    if freqs < 1:
        raise StructuralError("posenc needs at least one frequency")
    d = np.asarray(d, dtype=np.float64)
    scales = 2.0 ** np.arange(freqs)
    ang = d[..., None, :] * scales[:, None]  # (..., freqs, 3)
    enc = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)  # (..., freqs, 6)
    return enc.reshape(d.shape[:-1] + (6 * freqs,))


def radiance_nodes(tape: Tape, feats: Node, bias: Node, head: dict[str, Node]) -> tuple[Node, Node]:
    """Tape ops mapping (N, F) features (+ density bias (N,)) to sigma (N,) and rgb (N, 3)."""
    h = tape.silu(tape.add(tape.matmul(feats, head["head.w1"]), head["head.b1"]))
    out = tape.add(tape.matmul(h, head["head.w2"]), head["head.b2"])
    sig_logit = tape.sum(tape.slice(out, 0, 1, axis=-1), axis=-1)  # (N,)
    sigma = tape.softplus(tape.add(sig_logit, bias))
    rgb = tape.sigmoid(tape.slice(out, 1, 4, axis=-1))
    return sigma, rgb


def nerf_eval(feature, x, params: NerfHeadParams) -> RadianceSample:
    """Radiance at one point: sigma = softplus(logit + bias(x)), rgb = sigmoid."""
    feature = np.asarray(feature, dtype=np.float64)
    params.validate(feature.shape[-1])
    tape = Tape()
    feats = tape.constant(feature.reshape(1, -1))
    bias = tape.constant(np.asarray([density_bias(x)]))
    nodes = {k: tape.constant(v) for k, v in
             {"head.w1": params.w1, "head.b1": params.b1,
              "head.w2": params.w2, "head.b2": params.b2}.items()}
    sigma, rgb = radiance_nodes(tape, feats, bias, nodes)
    return RadianceSample(sigma=float(sigma.value[0]), rgb=rgb.value[0].copy())


def envmap_nodes(tape: Tape, enc: Node, v: Node, w: Node, b: Node, u: np.ndarray) -> Node:
    """Background color per ray: sigmoid(linear(concat(posenc(d), v))), weight spectrally normalized.

    enc: (R, 6*freqs) direction encodings (constant); v: (v_dim,) modulation.
    The weight is split below its two input blocks so the modulation vector
    does not need to be tiled across rays.
    """
    w_hat = spectral_weight_node(tape, w, u)
    n_enc = enc.value.shape[-1]
    w_enc = tape.slice(w_hat, 0, n_enc, axis=0)
    w_v = tape.slice(w_hat, n_enc, w.value.shape[0], axis=0)
    lit = tape.add(tape.matmul(enc, w_enc), tape.add(tape.matmul(v, w_v), b))
    return tape.sigmoid(lit)


def envmap_eval(d, v, params: EnvMapParams) -> np.ndarray:
    """Background rgb for unit direction(s) d under modulation v."""
    v = np.asarray(v, dtype=np.float64)
    params.validate(v.shape[0])
    d = np.asarray(d, dtype=np.float64)
    single = d.ndim == 1
    enc = posenc(d.reshape(-1, 3))
    tape = Tape()
    rgb = envmap_nodes(tape, tape.constant(enc), tape.constant(v),
                       tape.constant(params.w), tape.constant(params.b), params.u)
    out = rgb.value
    return out[0] if single else out
