"""Score-distillation training signal against a pluggable diffusion teacher.

The teacher supplies per-prompt target views and a noise prediction; the
residual (eps_hat - eps) is seeded straight into the renderer's pixels as a
gradient. Nothing differentiates through the teacher. The in-repo teacher is
analytic: each prompt maps to a deterministic composition of colored spheres
ray-cast with the same camera model as the renderer, so eps_hat has a closed
form and every identity is testable.
"""

from __future__ import annotations

import colorsys
import hashlib
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import ConfigError, ContractError, InputError, StructuralError
from .rendering import CameraSample, camera_rays

__all__ = [
    "NoiseSchedule", "TeacherContext", "Teacher", "AnalyticTeacher", "TeacherConfig",
    "alpha_bar", "add_noise", "analytic_eps", "cfg_combine", "guidance_interp",
    "sds_pixel_gradient",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Cosine signal-retention curve with the sampled range kept off both endpoints.

    weight_mode picks the SDS weighting w(t): "constant" is 1 everywhere;
    "snr_balanced" is sqrt((1 - ab) / ab), which cancels the analytic
    teacher's sqrt(ab / (1 - ab)) residual scale so gradient magnitudes stay
    uniform across timesteps (useful because the closed-form residual, unlike
    a learned denoiser's, grows without bound as t -> 0).
    """

    t_min: float = 0.002
    t_max: float = 1.0
    omega: float = 100.0
    weight_mode: str = "constant"

    def __post_init__(self):
        if not (0.0 < self.t_min < self.t_max <= 1.0):
            raise ConfigError(f"need 0 < t_min < t_max <= 1, got [{self.t_min}, {self.t_max}]")
        if self.weight_mode not in ("constant", "snr_balanced"):
            raise ConfigError(f"unknown weight_mode {self.weight_mode!r}")

    def sample_t(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.t_min, self.t_max))

    def weight(self, t: float) -> float:
        if self.weight_mode == "snr_balanced":
            ab = alpha_bar(t)
            return float(np.sqrt((1.0 - ab) / ab))
        return 1.0


def alpha_bar(t):
    """Signal retention cos^2(pi t / 2) for t in (0, 1]."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0.0) or np.any(t > 1.0):
        raise InputError(f"timestep outside (0, 1]: {t}")
    out = np.cos(np.pi * t / 2.0) ** 2
    return float(out) if out.ndim == 0 else out


def add_noise(x, eps, t: float):
    """Forward diffusion x_t = sqrt(ab) x + sqrt(1 - ab) eps."""
    x = np.asarray(x)
    eps = np.asarray(eps)
    if x.shape != eps.shape:
        raise StructuralError(f"image/noise shape mismatch: {x.shape} vs {eps.shape}")
    ab = alpha_bar(t)
    return np.sqrt(ab) * x + np.sqrt(1.0 - ab) * eps


def analytic_eps(x_t, t: float, target):
    """Closed-form denoiser prediction for a known target image.

    eps_hat = (x_t - sqrt(ab) target) / sqrt(1 - ab); consequently
    eps_hat - eps = sqrt(ab / (1 - ab)) (x - target) independent of eps.
    """
    x_t = np.asarray(x_t)
    target = np.asarray(target)
    if x_t.shape != target.shape:
        raise StructuralError(f"noised/target shape mismatch: {x_t.shape} vs {target.shape}")
    ab = alpha_bar(t)
    if ab <= 0.0 or ab >= 1.0:
        raise InputError(f"alpha_bar({t}) = {ab} is at a schedule endpoint")
    return (x_t - np.sqrt(ab) * target) / np.sqrt(1.0 - ab)


def cfg_combine(eps_uncond, eps_cond, omega: float):
    """Classifier-free guidance: eps_uncond + omega (eps_cond - eps_uncond)."""
    eps_uncond = np.asarray(eps_uncond)
    eps_cond = np.asarray(eps_cond)
    if eps_uncond.shape != eps_cond.shape:
        raise StructuralError("guidance operands differ in shape")
    omega = float(omega)
    if omega == 1.0:
        return eps_cond.copy()
    if omega == 0.0:
        return eps_uncond.copy()
    return eps_uncond + omega * (eps_cond - eps_uncond)


def guidance_interp(eps_uncond, eps1, eps2, omega1: float, omega2: float, alpha: float):
    """Guidance-weight interpolation over two conditional residuals.

    eps1/eps2 are conditional-minus-unconditional residuals, so the endpoints
    reduce to plain single-prompt guidance.
    """
    if not (0.0 <= alpha <= 1.0):
        raise InputError(f"alpha must be in [0, 1], got {alpha}")
    eps_uncond = np.asarray(eps_uncond)
    return eps_uncond + ((1.0 - alpha) * omega1) * np.asarray(eps1) \
        + (alpha * omega2) * np.asarray(eps2)


# -- conditioning -------------------------------------------------------------


@dataclass(frozen=True)
class Conditioning:
    """What the teacher is asked to denoise toward.

    kind: "prompt"   -> single prompt
          "latent"   -> target blended between two prompts with weight alpha
          "pair"     -> two prompts kept separate (guidance interpolation)
    """

    kind: str = "prompt"
    prompt: str | None = None
    prompt2: str | None = None
    alpha: float = 0.0


@dataclass
class TeacherContext:
    t: float
    cond: Conditioning
    camera: CameraSample
    hw: tuple[int, int]
    omega: float = 1.0
    omega2: float | None = None  # only for guidance interpolation


class Teacher(Protocol):
    """Target-image + noise-prediction provider; a DDM client fits behind this."""

    def target_image(self, prompt: str, camera: CameraSample, hw) -> np.ndarray: ...

    def unconditional_target(self, camera: CameraSample, hw) -> np.ndarray: ...

    def eps_hat(self, x_t: np.ndarray, t: float, target: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class TeacherConfig:
    background: float = 0.75
    saturation: float = 0.85
    value: float = 0.95
    hue_slot_offset: float = 0.13


# parts stack along +z so every slot stays visible from any azimuth; a nose
# marker on the body breaks rotational symmetry so views differ
_PART_ANCHORS = [
    (np.array([0.0, 0.0, -0.60]), 0.80),
    (np.array([0.0, 0.0, 0.40]), 0.58),
    (np.array([0.0, 0.0, 1.12]), 0.42),
    (np.array([0.0, 0.0, 1.64]), 0.28),
]
_NOSE = (np.array([0.72, 0.0, -0.60]), 0.30)


class AnalyticTeacher:
    """Deterministic procedural targets keyed by a prompt's fragment values."""

    def __init__(self, corpus, config: TeacherConfig = TeacherConfig()):
        self.corpus = corpus
        self.config = config
        self._scenes = {p: self._build_scene(p) for p in corpus.prompts}

    def _color(self, slot_index: int, frag_index: int, n_values: int) -> np.ndarray:
        hue = (frag_index / max(n_values, 1) + self.config.hue_slot_offset * slot_index) % 1.0
        return np.array(colorsys.hsv_to_rgb(hue, self.config.saturation, self.config.value))

    def _build_scene(self, prompt: str):
        combo = self.corpus.combo(prompt)
        slots = self.corpus.template.slots
        spheres = []
        for si, ((slot_name, values), frag) in enumerate(zip(slots, combo)):
            color = self._color(si, values.index(frag), len(values))
            center, radius = _PART_ANCHORS[si % len(_PART_ANCHORS)]
            # nudge geometry deterministically by fragment so shape also varies
            scale = 0.9 + 0.2 * (_stable_unit(slot_name, frag))
            spheres.append((center, radius * scale, color))
            if si == 0:
                spheres.append((_NOSE[0], _NOSE[1] * scale, 0.55 * color))
        return spheres

    def _raycast(self, spheres, camera: CameraSample, hw) -> np.ndarray:
        h, w = hw
        origin, dirs = camera_rays(camera, (h, w))
        best_t = np.full(dirs.shape[0], np.inf)
        img = np.full((dirs.shape[0], 3), self.config.background)
        for center, radius, color in spheres:
            oc = origin - center
            b = dirs @ oc
            c = float(oc @ oc) - radius * radius
            disc = b * b - c
            hit = disc > 0.0
            tq = -b - np.sqrt(np.where(hit, disc, 0.0))
            hit &= tq > 0.0
            closer = hit & (tq < best_t)
            best_t[closer] = tq[closer]
            img[closer] = color
        return img.reshape(h, w, 3)

    def target_image(self, prompt: str, camera: CameraSample, hw) -> np.ndarray:
        if prompt not in self._scenes:
            raise ContractError(f"prompt not in teacher corpus: {prompt!r}")
        return self._raycast(self._scenes[prompt], camera, hw)

    def unconditional_target(self, camera: CameraSample, hw) -> np.ndarray:
        """The 'no prompt' completion: mean target over the whole corpus."""
        acc = np.zeros(hw + (3,))
        for p in self.corpus.prompts:
            acc += self.target_image(p, camera, hw)
        return acc / len(self.corpus.prompts)

    def conditional_target(self, cond: Conditioning, camera: CameraSample, hw) -> np.ndarray:
        if cond.kind == "prompt":
            return self.target_image(cond.prompt, camera, hw)
        if cond.kind == "latent":
            t1 = self.target_image(cond.prompt, camera, hw)
            t2 = self.target_image(cond.prompt2, camera, hw)
            return (1.0 - cond.alpha) * t1 + cond.alpha * t2
        raise ContractError(f"teacher cannot build a single target for kind {cond.kind!r}")

    def eps_hat(self, x_t: np.ndarray, t: float, target: np.ndarray) -> np.ndarray:
        return analytic_eps(x_t, t, target)


def _stable_unit(*keys: str) -> float:
    """Deterministic value in [0, 1) from string keys, stable across processes."""
    digest = hashlib.sha256("|".join(keys).encode()).digest()
    return int.from_bytes(digest[:8], "little") / 2.0 ** 64


class TeacherError(RuntimeError):
    pass


def sds_pixel_gradient(rendered: np.ndarray, ctx: TeacherContext, rng: np.random.Generator,
                       teacher: Teacher, schedule: NoiseSchedule) -> tuple[np.ndarray, dict]:
    """Gradient image w(t) (eps_hat - eps) to seed into backward() at the pixels.

    The teacher stays outside the tape: the returned array is a constant with
    respect to model parameters (score-distillation contract).
    """
    if not (schedule.t_min <= ctx.t <= schedule.t_max):
        raise ContractError(f"timestep {ctx.t} outside schedule range")
    try:
        eps = rng.standard_normal(rendered.shape)
        x_t = add_noise(rendered, eps, ctx.t)
        if ctx.cond.kind == "pair":
            e_u = teacher.eps_hat(x_t, ctx.t, teacher.unconditional_target(ctx.camera, ctx.hw))
            e1 = teacher.eps_hat(x_t, ctx.t, teacher.target_image(ctx.cond.prompt, ctx.camera, ctx.hw)) - e_u
            e2 = teacher.eps_hat(x_t, ctx.t, teacher.target_image(ctx.cond.prompt2, ctx.camera, ctx.hw)) - e_u
            omega2 = ctx.omega if ctx.omega2 is None else ctx.omega2
            eps_hat = guidance_interp(e_u, e1, e2, ctx.omega, omega2, ctx.cond.alpha)
        else:
            target = teacher.conditional_target(ctx.cond, ctx.camera, ctx.hw)
            e_c = teacher.eps_hat(x_t, ctx.t, target)
            if ctx.omega == 1.0:
                eps_hat = e_c
            else:
                e_u = teacher.eps_hat(x_t, ctx.t, teacher.unconditional_target(ctx.camera, ctx.hw))
                eps_hat = cfg_combine(e_u, e_c, ctx.omega)
    except (ContractError, InputError, StructuralError):
        raise
    except Exception as e:  # teacher failure: callers skip the step and log
        raise TeacherError(f"teacher evaluation failed: {e}") from e
    return schedule.weight(ctx.t) * (eps_hat - eps), {"t": ctx.t}
