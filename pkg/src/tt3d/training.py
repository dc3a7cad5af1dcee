"""Amortized training loop, Adam, regularizers, interpolation, finetuning.

Each step: for every batch element sample a prompt (or an interpolant pair),
a camera, a shading augmentation and a timestep; render on a fresh tape; ask
the teacher for eps_hat; seed (eps_hat - eps) at the pixels; accumulate
summed gradients; then one Adam update and one power-iteration advance of
the spectral-norm vectors. Exactly one thread mutates parameters.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tape
from .config import ExperimentConfig
from .errors import ConfigError, ContractError, StructuralError
from .guidance import Conditioning, TeacherContext, TeacherError, sds_pixel_gradient
from .mapping import interpolate_embeddings, power_iterate
from .model import ModelConfig, ModelSnapshot, PARAM_NAMES, init_params
from .prompts import Corpus, CorpusSplit
from .rendering import RenderOpts, build_render_graph, sample_camera

__all__ = [
    "AdamState", "Trainer", "adam_update", "sample_interpolant",
    "apply_interpolation", "opacity_regularizer", "orientation_regularizer",
    "train", "finetune",
]

METRIC_COLUMNS = ("step", "frames_per_prompt", "mean_sds_seed_norm", "kappa",
                  "eval_r_prob_seen", "eval_r_prob_unseen", "wall_ms")

_SN_PAIRS = (("map.w1", "sn.map.w1"), ("map.w2", "sn.map.w2"), ("env.w", "sn.env.w"))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: dict[str, np.ndarray], names) -> "AdamState":
        return cls(m={n: np.zeros_like(params[n]) for n in names},
                   v={n: np.zeros_like(params[n]) for n in names})


def adam_update(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                state: AdamState, lr: float, beta1: float = 0.0, beta2: float = 0.999,
                eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam, in place on `params` and `state`."""
    state.step += 1
    t = state.step
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise StructuralError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        params[name] -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(params[name].dtype, copy=False)


def sample_interpolant(kappa: float, rng: np.random.Generator) -> float:
    """Two-category Dirichlet draw: Beta(kappa, kappa); kappa=0 is Bernoulli(1/2)."""
    if kappa < 0:
        raise ConfigError("kappa must be >= 0")
    if kappa == 0.0:
        return float(rng.integers(0, 2))
    return float(rng.beta(kappa, kappa))


def apply_interpolation(mode: str, c1, c2, alpha: float, rng: np.random.Generator,
                        labels: tuple[str, str] = ("prompt1", "prompt2"),
                        omega: float = 1.0):
    """Mapping-network input plus teacher conditioning for one batch element.

    The mapping network always receives the interpolated embedding; only the
    teacher-side conditioning differs by mode.
    """
    p1, p2 = labels
    if mode == "none":
        z = int(rng.integers(0, 2))  # no interpolants: endpoints only
        alpha = float(z)
        return interpolate_embeddings(c1, c2, alpha), Conditioning("prompt", p2 if z else p1)
    if not (0.0 <= alpha <= 1.0):
        raise ContractError(f"alpha must be in [0, 1], got {alpha}")
    map_input = interpolate_embeddings(c1, c2, alpha)
    if mode == "latent":
        return map_input, Conditioning("latent", p1, p2, alpha)
    if mode == "loss":
        z = bool(rng.uniform() < alpha)
        return map_input, Conditioning("prompt", p2 if z else p1)
    if mode == "guidance":
        return map_input, Conditioning("pair", p1, p2, alpha)
    raise ConfigError(f"unknown interpolation mode {mode!r}")


def opacity_regularizer(alpha_map, weight: float = 1.0) -> float:
    """weight * mean accumulated alpha over rays."""
    alpha_map = np.asarray(alpha_map)
    if alpha_map.size == 0:
        return 0.0
    return float(weight * alpha_map.mean())


def orientation_regularizer(normals, view_dirs, weights, scale: float = 1.0) -> float:
    """scale * sum_i w_i max(0, n_i . d_i)^2: penalize normals facing away."""
    normals = np.asarray(normals)
    view_dirs = np.asarray(view_dirs)
    weights = np.asarray(weights)
    nd = np.maximum(0.0, (normals * view_dirs).sum(axis=-1))
    return float(scale * (weights * nd * nd).sum())


@dataclass
class StepMetrics:
    step: int
    frames: int
    mean_sds_seed_norm: float
    kappa: float
    skipped: bool = False


class Trainer:
    """Single-writer optimization loop over a prompt corpus."""

    def __init__(self, cfg: ExperimentConfig, corpus: Corpus, split: CorpusSplit,
                 teacher, params: dict[str, np.ndarray] | None = None,
                 trainable: tuple[str, ...] | None = None,
                 train_prompts: list[str] | None = None):
        if corpus.embed_shape != cfg.model.embed_shape:
            raise StructuralError(
                f"corpus embeds {corpus.embed_shape}, model expects {cfg.model.embed_shape}")
        self.cfg = cfg
        self.corpus = corpus
        self.split = split
        self.teacher = teacher
        self.rng = np.random.default_rng(cfg.train.seed)
        self.params = params if params is not None else init_params(cfg.model, self.rng)
        self.trainable = tuple(trainable) if trainable is not None else tuple(PARAM_NAMES)
        self.adam = AdamState.zeros(self.params, self.trainable)
        self.step = 0
        self.skipped = 0
        self.train_prompts = list(train_prompts) if train_prompts is not None else list(split.seen)
        if not self.train_prompts:
            raise ConfigError("no prompts to train on")
        dt = cfg.model.np_dtype
        self._embed = {p: corpus.embedding(p).astype(dt) for p in corpus.prompts}
        self._opts = RenderOpts(image_size=cfg.train.image_size, n_samples=cfg.train.n_ray_samples)

    # -- sampling ---------------------------------------------------------------

    def _draw_element(self, kappa: float):
        """(mapping input embedding, teacher conditioning) for one batch element."""
        tr = self.cfg.train
        rng = self.rng
        prompts = self.train_prompts
        if tr.interpolation.mode == "none" or len(prompts) < 2:
            p = prompts[int(rng.integers(0, len(prompts)))]
            return self._embed[p], Conditioning("prompt", p)
        i, j = rng.choice(len(prompts), size=2, replace=False)
        p1, p2 = prompts[int(i)], prompts[int(j)]
        alpha = sample_interpolant(kappa, rng)
        return apply_interpolation(tr.interpolation.mode, self._embed[p1], self._embed[p2],
                                   alpha, rng, labels=(p1, p2), omega=tr.noise.omega)

    # -- one optimization step ----------------------------------------------------

    def train_step(self) -> StepMetrics:
        tr = self.cfg.train
        kappa = tr.interpolation.kappa_at(self.step)
        grads = {n: np.zeros_like(self.params[n]) for n in self.trainable}
        seed_norms = []
        hw = (tr.image_size, tr.image_size)

        for _ in range(tr.batch_size):
            c, cond = self._draw_element(kappa)
            cam = sample_camera(self.rng, self.cfg.camera)
            t = tr.noise.sample_t(self.rng)

            tape = Tape()
            pnodes = {}
            for name, value in self.params.items():
                if name in self.trainable:
                    pnodes[name] = tape.leaf(value)
                else:
                    pnodes[name] = tape.constant(value)
            graph = build_render_graph(tape, pnodes, self.cfg.model, c, cam, self._opts)
            rendered = graph.pixels.value.reshape(hw + (3,))

            ctx = TeacherContext(t=t, cond=cond, camera=cam, hw=hw, omega=tr.noise.omega)
            try:
                seed, _ = sds_pixel_gradient(rendered, ctx, self.rng, self.teacher, tr.noise)
            except TeacherError:
                self.skipped += 1
                self.step += 1
                return StepMetrics(self.step - 1, 0, math.nan, kappa, skipped=True)
            seed_norms.append(float(np.sqrt((seed ** 2).mean())))

            loss = tape.sum(tape.mul(graph.pixels,
                                     tape.constant(seed.reshape(-1, 3).astype(rendered.dtype))))
            if tr.opacity_weight > 0.0:
                n_rays = graph.alpha.value.shape[0]
                loss = tape.add(loss, tape.scale(tape.sum(graph.alpha),
                                                 tr.opacity_weight / n_rays))
            if tr.orientation_weight > 0.0 and graph.normals is not None:
                n_smp = graph.weights.value.shape[1]
                dirs_per_sample = np.repeat(graph.dirs[:, None, :], n_smp, axis=1)
                nd = np.maximum(0.0, (graph.normals.reshape(-1, n_smp, 3)
                                      * dirs_per_sample).sum(axis=-1))
                pen = tape.sum(tape.mul(graph.weights, tape.constant((nd * nd).astype(rendered.dtype))))
                loss = tape.add(loss, tape.scale(pen, tr.orientation_weight))
            tape.backward(loss)
            for name in self.trainable:
                grads[name] += tape.grad(pnodes[name])

        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            self.skipped += 1  # never silently apply a broken update
            self.step += 1
            return StepMetrics(self.step - 1, tr.batch_size, math.nan, kappa, skipped=True)

        adam_update(self.params, grads, self.adam, lr=tr.lr, beta1=tr.beta1,
                    beta2=tr.beta2, eps=tr.adam_eps)
        for wname, uname in _SN_PAIRS:
            if wname in self.trainable:
                u = power_iterate(self.params[wname].T, self.params[uname])
                self.params[uname] = u.astype(self.params[uname].dtype, copy=False)
        self.step += 1
        return StepMetrics(self.step - 1, tr.batch_size,
                           float(np.mean(seed_norms)) if seed_norms else math.nan, kappa)

    # -- snapshots and evaluation ---------------------------------------------------

    def snapshot(self) -> ModelSnapshot:
        return ModelSnapshot(self.cfg.model, {k: v.copy() for k, v in self.params.items()})

    def checkpoint_state(self):
        from .checkpoint import CheckpointState
        return CheckpointState(config=self.cfg,
                               params={k: v.copy() for k, v in self.params.items()},
                               step=self.step,
                               adam_m={k: v.copy() for k, v in self.adam.m.items()},
                               adam_v={k: v.copy() for k, v in self.adam.v.items()},
                               adam_step=self.adam.step,
                               rng_state=self.rng.bit_generator.state)

    def frames_per_prompt(self) -> float:
        return self.step * self.cfg.train.batch_size / len(self.train_prompts)

    def _evaluate(self):
        from .evaluation import TeacherScorer, eval_cameras, evaluate
        tr = self.cfg.train
        cams = eval_cameras(tr.eval_views)
        scorer = TeacherScorer(self.teacher, cams, (tr.image_size, tr.image_size))
        snap = self.snapshot()
        opts = RenderOpts(image_size=tr.image_size, n_samples=tr.n_ray_samples)
        seen = evaluate(snap, self.corpus, self.split.seen, scorer, opts,
                        query_prompts=self.corpus.prompts).mean_r_probability
        unseen = math.nan
        if self.split.unseen:
            unseen = evaluate(snap, self.corpus, self.split.unseen, scorer, opts,
                              query_prompts=self.corpus.prompts).mean_r_probability
        return seen, unseen

    def run(self, metrics_path=None, checkpoint_path=None, log=print) -> list[dict]:
        """Full loop: periodic metrics rows, optional CSV/checkpoint output."""
        from .checkpoint import save_checkpoint
        tr = self.cfg.train
        rows = []
        t_last = time.perf_counter()

        def emit(metrics: StepMetrics, evals=(None, None)):
            nonlocal t_last
            now = time.perf_counter()
            row = {
                "step": metrics.step,
                "frames_per_prompt": self.frames_per_prompt(),
                "mean_sds_seed_norm": metrics.mean_sds_seed_norm,
                "kappa": metrics.kappa,
                "eval_r_prob_seen": "" if evals[0] is None else evals[0],
                "eval_r_prob_unseen": "" if evals[1] is None or math.isnan(evals[1]) else evals[1],
                "wall_ms": (now - t_last) * 1000.0,
            }
            t_last = now
            rows.append(row)
            if log:
                log(f"step {row['step']:>6}  fpp {row['frames_per_prompt']:>8.1f}  "
                    f"seed_rms {row['mean_sds_seed_norm']:.4f}  kappa {row['kappa']:.2f}"
                    + (f"  r_prob seen {evals[0]:.4f}" if evals[0] is not None else ""))

        for k in range(tr.steps):
            metrics = self.train_step()
            is_last = k == tr.steps - 1
            is_eval = is_last or (tr.eval_interval > 0 and self.step % tr.eval_interval == 0)
            is_log = tr.log_interval > 0 and (self.step % tr.log_interval == 0)
            if is_eval:
                emit(metrics, self._evaluate())
                if checkpoint_path is not None:
                    save_checkpoint(self.checkpoint_state(), checkpoint_path)  # last-good on interruption
            elif is_log:
                emit(metrics)
        if checkpoint_path is not None:
            save_checkpoint(self.checkpoint_state(), checkpoint_path)
        if metrics_path is not None:
            with open(metrics_path, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
                writer.writeheader()
                writer.writerows(rows)
        return rows


def train(cfg: ExperimentConfig, corpus: Corpus, split: CorpusSplit, teacher,
          metrics_path=None, checkpoint_path=None, log=print) -> Trainer:
    """Amortized training over the seen split; returns the trainer (checkpoint state)."""
    trainer = Trainer(cfg, corpus, split, teacher)
    trainer.run(metrics_path=metrics_path, checkpoint_path=checkpoint_path, log=log)
    return trainer


def finetune(cfg: ExperimentConfig, params: dict[str, np.ndarray], corpus: Corpus,
             split: CorpusSplit, teacher, prompt: str, steps: int,
             metrics_path=None, checkpoint_path=None, log=print) -> Trainer:
    """Per-prompt finetuning of an additive offset to the mapping-network output.

    All pre-existing weights are frozen; the optimizer state is re-initialized.
    The offset lives on v (or on the flat grid output with finetune_offset='w').
    """
    if prompt not in corpus.prompts:
        raise StructuralError(f"prompt not in corpus: {prompt!r}")
    cfg_model: ModelConfig = cfg.model
    dt = cfg_model.np_dtype
    params = {k: v.copy() for k, v in params.items()}
    offset_name = "offset.v" if cfg.train.finetune_offset == "v" else "offset.w"
    dim = cfg_model.v_dim if offset_name == "offset.v" else cfg_model.grid.total_params
    if offset_name not in params:
        params[offset_name] = np.zeros(dim, dtype=dt)
    tcfg = replace(cfg, train=replace(cfg.train, steps=steps))
    trainer = Trainer(tcfg, corpus, split, teacher, params=params,
                      trainable=(offset_name,), train_prompts=[prompt])
    trainer.run(metrics_path=metrics_path, checkpoint_path=checkpoint_path, log=log)
    return trainer
