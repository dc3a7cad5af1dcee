#!/usr/bin/env python3
"""Train an interpolation-amortized pair model and emit alpha-sweep strips."""

import argparse
from pathlib import Path

import numpy as np

from tt3d.config import ExperimentConfig
from tt3d.evaluation import eval_cameras
from tt3d.guidance import AnalyticTeacher
from tt3d.mapping import interpolate_embeddings
from tt3d.prompts import Corpus, PromptTemplate
from tt3d.prompts import CorpusSplit
from tt3d.rendering import RenderOpts, render_frame
from tt3d.service import frame_to_png
from tt3d.training import Trainer


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/interpolation_pair.json")
    ap.add_argument("--out-dir", default="runs/interpolation")
    ap.add_argument("--strip-frames", type=int, default=7)
    args = ap.parse_args()

    cfg = ExperimentConfig.from_json(Path(args.config).read_text())
    corpus = Corpus(PromptTemplate(cfg.corpus.template, cfg.corpus.slots),
                    embed_dim=cfg.corpus.embed_dim, embed_seed=cfg.corpus.embed_seed)
    # interpolation training draws pairs from the full corpus
    split = CorpusSplit(seen=list(corpus.prompts), unseen=[], seed=0, fraction=1.0)
    teacher = AnalyticTeacher(corpus, cfg.teacher)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    print(f"interpolation mode: {cfg.train.interpolation.mode}, "
          f"kappa schedule {cfg.train.interpolation.schedule}")
    trainer = Trainer(cfg, corpus, split, teacher)
    trainer.run(metrics_path=out / "metrics.csv", checkpoint_path=out / "model.ckpt")

    snap = trainer.snapshot()
    cam = eval_cameras(1)[0]
    opts = RenderOpts(image_size=64, n_samples=128)
    e1 = corpus.embedding(corpus.prompts[0])
    e2 = corpus.embedding(corpus.prompts[1])
    frames = []
    for k in range(args.strip_frames):
        alpha = k / (args.strip_frames - 1)
        frame = render_frame(snap, interpolate_embeddings(e1, e2, alpha), cam, opts)
        frames.append(frame.rgb)
        (out / f"alpha_{alpha:.3f}.png").write_bytes(frame_to_png(frame.rgb))
    (out / "strip.png").write_bytes(frame_to_png(np.concatenate(frames, axis=1)))
    print(f"wrote {args.strip_frames} frames + strip.png to {out}")


if __name__ == "__main__":
    main()
