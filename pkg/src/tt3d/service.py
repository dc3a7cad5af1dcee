"""HTTP render service over a frozen checkpoint.

GET  /health   -> 200 {"status": "ok"}
GET  /prompts  -> [{"id", "text", "split"}, ...]
GET  /meta     -> config summary (includes the alpha cache rounding)
POST /render   -> PNG bytes for {"prompt_id"} or {"pair": [a, b], "alpha"}
                  plus optional camera/size/samples fields

Handlers never mutate the snapshot; grid modulations are cached per prompt
(or per pair with alpha rounded to 1e-3) and reused across requests.
"""

from __future__ import annotations

import io
import json
import math
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

from .checkpoint import CheckpointState
from .errors import InputError
from .mapping import interpolate_embeddings
from .model import ModelSnapshot, compute_modulation
from .prompts import Corpus, PromptTemplate, split_seen_unseen
from .rendering import CameraSample, RenderOpts, render_frame

__all__ = ["RenderService", "serve", "frame_to_png", "DEFAULT_BIND"]

DEFAULT_BIND = "127.0.0.1:8787"
ALPHA_ROUNDING = 1e-3
MAX_SIZE = 512
MAX_SAMPLES = 512


def frame_to_png(rgb: np.ndarray) -> bytes:
    arr = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    img = Image.fromarray((np.rint(arr * 255.0)).astype(np.uint8), mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def corpus_from_config(cfg) -> tuple[Corpus, list[str]]:
    template = PromptTemplate(template=cfg.corpus.template, slots=cfg.corpus.slots)
    corpus = Corpus(template=template, embed_dim=cfg.corpus.embed_dim,
                    embed_seed=cfg.corpus.embed_seed)
    split = split_seen_unseen(corpus, cfg.corpus.seen_fraction, cfg.corpus.split_seed)
    return corpus, split.seen


class RenderService:
    """Request-independent core so handlers stay thin and testable."""

    def __init__(self, state: CheckpointState, threads: int = 4):
        self.state = state
        self.snapshot: ModelSnapshot = state.snapshot()
        self.corpus, seen = corpus_from_config(state.config)
        self._seen = set(seen)
        self._cache: dict[tuple, tuple] = {}
        self._cache_lock = threading.Lock()
        self._render_slots = threading.Semaphore(max(1, threads))

    # -- endpoints ------------------------------------------------------------

    def health(self) -> dict:
        return {"status": "ok"}

    def prompts(self) -> list[dict]:
        return [{"id": i, "text": p, "split": "seen" if p in self._seen else "unseen"}
                for i, p in enumerate(self.corpus.prompts)]

    def meta(self) -> dict:
        cfg = self.state.config
        return {
            "corpus_size": len(self.corpus),
            "grid_levels": list(cfg.model.grid.levels),
            "v_dim": cfg.model.v_dim,
            "step": self.state.step,
            "alpha_rounding": ALPHA_ROUNDING,
            "max_size": MAX_SIZE,
            "max_samples": MAX_SAMPLES,
        }

    # -- rendering -----------------------------------------------------------------

    def _prompt_by_id(self, pid) -> str:
        if not isinstance(pid, int) or not (0 <= pid < len(self.corpus)):
            raise KeyError(pid)
        return self.corpus.prompts[pid]

    def _modulation(self, key: tuple, embedding: np.ndarray):
        with self._cache_lock:
            hitem = self._cache.get(key)
        if hitem is not None:
            return hitem
        modulation = compute_modulation(self.snapshot, embedding)
        with self._cache_lock:
            self._cache.setdefault(key, modulation)
            return self._cache[key]

    def render(self, req: dict) -> bytes:
        if not isinstance(req, dict):
            raise InputError("request body must be a JSON object")
        alpha = req.get("alpha")
        if "pair" in req:
            pair = req["pair"]
            if (not isinstance(pair, (list, tuple))) or len(pair) != 2:
                raise InputError("pair must be [id_a, id_b]")
            alpha = 0.0 if alpha is None else float(alpha)
            if not (0.0 <= alpha <= 1.0):
                raise InputError("alpha must be in [0, 1]")
            pa, pb = (self._prompt_by_id(pair[0]), self._prompt_by_id(pair[1]))
            alpha_key = int(round(alpha / ALPHA_ROUNDING))
            key = ("pair", pair[0], pair[1], alpha_key)
            embedding = interpolate_embeddings(self.corpus.embedding(pa),
                                               self.corpus.embedding(pb),
                                               alpha_key * ALPHA_ROUNDING)
        elif "prompt_id" in req:
            if alpha is not None:
                raise InputError("alpha is only valid with a prompt pair")
            prompt = self._prompt_by_id(req["prompt_id"])
            key = ("prompt", req["prompt_id"])
            embedding = self.corpus.embedding(prompt)
        else:
            raise InputError("request needs prompt_id or pair")

        size = int(req.get("size", 64))
        samples = int(req.get("samples", 64))
        if not (0 < size <= MAX_SIZE):
            raise InputError(f"size must be in (0, {MAX_SIZE}]")
        if not (0 < samples <= MAX_SAMPLES):
            raise InputError(f"samples must be in (0, {MAX_SAMPLES}]")
        cam = CameraSample(
            distance=float(req.get("distance", 2.5)),
            azimuth=math.radians(float(req.get("azimuth_deg", 0.0))),
            elevation=math.radians(float(req.get("elevation_deg", 20.0))),
            focal=float(req.get("focal", 1.0)),
            light_pos=np.array([0.0, 0.0, 3.0]),
        )
        modulation = self._modulation(key, embedding)
        with self._render_slots:
            frame = render_frame(self.snapshot, embedding, cam,
                                 RenderOpts(image_size=size, n_samples=samples),
                                 modulation=modulation)
        return frame_to_png(frame.rgb)


class _Handler(BaseHTTPRequestHandler):
    service: RenderService = None  # set by serve()

    def _send(self, code: int, body: bytes, content_type: str):
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, code: int, obj):
        self._send(code, json.dumps(obj).encode(), "application/json")

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def do_GET(self):
        if self.path == "/health":
            self._send_json(200, self.service.health())
        elif self.path == "/prompts":
            self._send_json(200, self.service.prompts())
        elif self.path == "/meta":
            self._send_json(200, self.service.meta())
        else:
            self._send_json(404, {"error": f"no such endpoint: {self.path}"})

    def do_POST(self):
        if self.path != "/render":
            self._send_json(404, {"error": f"no such endpoint: {self.path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            req = json.loads(self.rfile.read(length).decode() or "{}")
            png = self.service.render(req)
        except KeyError as e:
            self._send_json(404, {"error": f"unknown prompt id: {e}"})
            return
        except (InputError, ValueError, TypeError) as e:
            self._send_json(400, {"error": str(e)})
            return
        self._send(200, png, "image/png")


def serve(state: CheckpointState, bind: str | None = None, threads: int = 4) -> ThreadingHTTPServer:
    """Build the server (callers run serve_forever); ATT3D_BIND overrides bind."""
    bind = os.environ.get("ATT3D_BIND", bind or DEFAULT_BIND)
    host, _, port = bind.partition(":")
    service = RenderService(state, threads=threads)
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, int(port or "0")), handler)
