#!/usr/bin/env python3
"""Render an azimuth orbit of one prompt from a checkpoint into a strip PNG."""

import argparse
import math
from pathlib import Path

import numpy as np

from tt3d.checkpoint import load_checkpoint
from tt3d.prompts import Corpus, PromptTemplate
from tt3d.rendering import CameraSample, RenderOpts, render_frame
from tt3d.service import frame_to_png


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--prompt-id", type=int, default=0)
    ap.add_argument("--frames", type=int, default=8)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--samples", type=int, default=96)
    ap.add_argument("--elevation", type=float, default=20.0)
    ap.add_argument("--out", default="turntable.png")
    args = ap.parse_args()

    state = load_checkpoint(args.checkpoint)
    cfg = state.config
    corpus = Corpus(PromptTemplate(cfg.corpus.template, cfg.corpus.slots),
                    embed_dim=cfg.corpus.embed_dim, embed_seed=cfg.corpus.embed_seed)
    emb = corpus.embedding(corpus.prompts[args.prompt_id])
    snap = state.snapshot()
    opts = RenderOpts(image_size=args.size, n_samples=args.samples)
    strip = []
    for k in range(args.frames):
        cam = CameraSample(distance=2.5, azimuth=2 * math.pi * k / args.frames,
                           elevation=math.radians(args.elevation), focal=1.0,
                           light_pos=np.array([0.0, 0.0, 3.0]))
        strip.append(render_frame(snap, emb, cam, opts).rgb)
    Path(args.out).write_bytes(frame_to_png(np.concatenate(strip, axis=1)))
    print(f"wrote {args.out} ({args.frames} views of {corpus.prompts[args.prompt_id]!r})")


if __name__ == "__main__":
    main()
