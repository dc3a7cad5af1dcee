"""Command line entry points: train, finetune, render, interpolate, eval, serve."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .errors import ConfigError, ContractError, InputError, IntegrityError, StructuralError
from .evaluation import TeacherScorer, eval_cameras, evaluate
from .guidance import AnalyticTeacher
from .mapping import interpolate_embeddings
from .prompts import Corpus, PromptTemplate, split_seen_unseen
from .rendering import CameraSample, RenderOpts, render_frame
from .service import frame_to_png, serve

USER_ERRORS = (ConfigError, ContractError, InputError, IntegrityError, StructuralError,
               FileNotFoundError, json.JSONDecodeError)


def _load_experiment(path: str) -> ExperimentConfig:
    return ExperimentConfig.from_json(Path(path).read_text())


def _corpus_for(cfg: ExperimentConfig):
    template = PromptTemplate(template=cfg.corpus.template, slots=cfg.corpus.slots)
    corpus = Corpus(template=template, embed_dim=cfg.corpus.embed_dim,
                    embed_seed=cfg.corpus.embed_seed)
    split = split_seen_unseen(corpus, cfg.corpus.seen_fraction, cfg.corpus.split_seed)
    teacher = AnalyticTeacher(corpus, cfg.teacher)
    return corpus, split, teacher


def _camera_from_args(args) -> CameraSample:
    return CameraSample(distance=args.distance, azimuth=math.radians(args.azimuth),
                        elevation=math.radians(args.elevation), focal=args.focal,
                        light_pos=np.array([0.0, 0.0, 3.0]))


def cmd_train(args) -> int:
    from .training import train
    cfg = _load_experiment(args.config)
    corpus, split, teacher = _corpus_for(cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train(cfg, corpus, split, teacher,
          metrics_path=out_dir / "metrics.csv",
          checkpoint_path=out_dir / "model.ckpt",
          log=print if not args.quiet else None)
    print(f"checkpoint: {out_dir / 'model.ckpt'}")
    return 0


def cmd_finetune(args) -> int:
    from .training import finetune
    state = load_checkpoint(args.checkpoint)
    cfg = state.config
    corpus, split, teacher = _corpus_for(cfg)
    trainer = finetune(cfg, state.params, corpus, split, teacher,
                       prompt=args.prompt, steps=args.steps,
                       log=print if not args.quiet else None)
    save_checkpoint(trainer.checkpoint_state(), args.out)
    print(f"checkpoint: {args.out}")
    return 0


def _resolve_embedding(corpus, args):
    if args.prompt_id is None:
        raise InputError("--prompt-id is required")
    if not (0 <= args.prompt_id < len(corpus)):
        raise InputError(f"prompt id {args.prompt_id} outside corpus of {len(corpus)}")
    return corpus.embedding(corpus.prompts[args.prompt_id])


def cmd_render(args) -> int:
    state = load_checkpoint(args.checkpoint)
    corpus, _, _ = _corpus_for(state.config)
    emb = _resolve_embedding(corpus, args)
    frame = render_frame(state.snapshot(), emb, _camera_from_args(args),
                         RenderOpts(image_size=args.size, n_samples=args.samples))
    Path(args.out).write_bytes(frame_to_png(frame.rgb))
    print(f"wrote {args.out}")
    return 0


def cmd_interpolate(args) -> int:
    state = load_checkpoint(args.checkpoint)
    corpus, _, _ = _corpus_for(state.config)
    for pid in (args.a, args.b):
        if not (0 <= pid < len(corpus)):
            raise InputError(f"prompt id {pid} outside corpus of {len(corpus)}")
    ea = corpus.embedding(corpus.prompts[args.a])
    eb = corpus.embedding(corpus.prompts[args.b])
    snapshot = state.snapshot()
    cam = _camera_from_args(args)
    opts = RenderOpts(image_size=args.size, n_samples=args.samples)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    strip = []
    for k in range(args.steps):
        alpha = k / (args.steps - 1) if args.steps > 1 else 0.0
        frame = render_frame(snapshot, interpolate_embeddings(ea, eb, alpha), cam, opts)
        strip.append(frame.rgb)
        path = out_dir / f"alpha_{alpha:.3f}.png"
        path.write_bytes(frame_to_png(frame.rgb))
        print(f"wrote {path}")
    strip_img = np.concatenate(strip, axis=1)  # left-to-right sweep, one row
    (out_dir / "strip.png").write_bytes(frame_to_png(strip_img))
    print(f"wrote {out_dir / 'strip.png'}")
    return 0


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    cfg = state.config
    corpus, split, teacher = _corpus_for(cfg)
    prompts = {"seen": split.seen, "unseen": split.unseen,
               "all": corpus.prompts}[args.split]
    if not prompts:
        raise InputError(f"split {args.split!r} is empty")
    scorer = TeacherScorer(teacher, eval_cameras(args.views), (args.size, args.size))
    report = evaluate(state.snapshot(), corpus, prompts, scorer,
                      RenderOpts(image_size=args.size, n_samples=args.samples),
                      query_prompts=corpus.prompts)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def cmd_serve(args) -> int:
    state = load_checkpoint(args.checkpoint)
    server = serve(state, bind=args.bind, threads=args.threads)
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tt3d",
        description="Amortized text-to-3D: train, finetune, render, interpolate, eval, serve.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="amortized training from an experiment config")
    p.add_argument("--config", required=True, help="experiment JSON")
    p.add_argument("--out-dir", required=True, help="directory for checkpoint + metrics.csv")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("finetune", help="finetune an output offset for one prompt")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt", required=True, help="exact prompt text from the corpus")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_finetune)

    def camera_flags(p):
        p.add_argument("--azimuth", type=float, default=0.0, help="degrees")
        p.add_argument("--elevation", type=float, default=20.0, help="degrees")
        p.add_argument("--distance", type=float, default=2.5)
        p.add_argument("--focal", type=float, default=1.0)
        p.add_argument("--size", type=int, default=128)
        p.add_argument("--samples", type=int, default=96)

    p = sub.add_parser("render", help="render one prompt to a PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt-id", type=int, required=True)
    p.add_argument("--out", default="render.png")
    camera_flags(p)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("interpolate", help="sweep alpha between two prompts into a strip of PNGs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--a", type=int, required=True, help="first prompt id")
    p.add_argument("--b", type=int, required=True, help="second prompt id")
    p.add_argument("--steps", type=int, default=7)
    p.add_argument("--out-dir", default="interp")
    camera_flags(p)
    p.set_defaults(fn=cmd_interpolate)

    p = sub.add_parser("eval", help="R-probability / R-precision report as JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("seen", "unseen", "all"), default="all")
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve", help="HTTP render service for the viewer")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bind", default=None, help="host:port (ATT3D_BIND overrides)")
    p.add_argument("--threads", type=int, default=4, help="max concurrent renders")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except USER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
