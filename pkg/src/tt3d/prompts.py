"""Compositional prompts, synthetic embeddings, splits, and the embedding cache.

Prompts are Cartesian compositions of fragment slots. Embeddings stand in for
cached text-encoder output: one row per slot, each row a fixed pseudo-random
unit vector keyed by (slot, fragment), so compositional structure is explicit
and two prompts sharing a fragment share that row exactly.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError

__all__ = [
    "PromptTemplate", "Corpus", "CorpusSplit", "EmbeddingCache",
    "compose_corpus", "split_seen_unseen", "load_corpus_config",
]


@dataclass(frozen=True)
class PromptTemplate:
    """A format string plus ordered fragment lists, e.g. 'a {animal} {theme}'."""

    template: str
    slots: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        names = re.findall(r"\{(\w+)\}", self.template)
        slot_names = [n for n, _ in self.slots]
        if names != slot_names:
            raise ConfigError(f"template fields {names} do not match slots {slot_names}")
        for name, values in self.slots:
            if len(values) == 0:
                raise ConfigError(f"slot {name!r} has no fragments")
            if len(set(values)) != len(values):
                raise ConfigError(f"slot {name!r} repeats a fragment")

    @property
    def slot_names(self) -> list[str]:
        return [n for n, _ in self.slots]

    def render(self, combo) -> str:
        return self.template.format(**dict(zip(self.slot_names, combo)))


def compose_corpus(template: PromptTemplate) -> list[str]:
    """All slot combinations, in stable lexicographic (product) order."""
    return [template.render(c) for c in itertools.product(*(v for _, v in template.slots))]


@dataclass
class Corpus:
    """Prompts plus their deterministic block embeddings."""

    template: PromptTemplate
    embed_dim: int = 8
    embed_seed: int = 0
    prompts: list[str] = field(default_factory=list)
    _combos: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        combos = list(itertools.product(*(v for _, v in self.template.slots)))
        self.prompts = [self.template.render(c) for c in combos]
        self._combos = dict(zip(self.prompts, combos))
        if len(self._combos) != len(self.prompts):
            raise ConfigError("composed prompts are not unique")
        self._rows: dict[tuple[str, str], np.ndarray] = {}

    def __len__(self):
        return len(self.prompts)

    @property
    def embed_shape(self) -> tuple[int, int]:
        return (len(self.template.slots), self.embed_dim)

    def combo(self, prompt: str) -> tuple[str, ...]:
        try:
            return self._combos[prompt]
        except KeyError:
            raise InputError(f"prompt not in corpus: {prompt!r}") from None

    def _row(self, slot: str, fragment: str) -> np.ndarray:
        key = (slot, fragment)
        if key not in self._rows:
            digest = hashlib.sha256(f"{self.embed_seed}|{slot}|{fragment}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            row = rng.standard_normal(self.embed_dim)
            self._rows[key] = row / np.linalg.norm(row)
        return self._rows[key]

    def embedding(self, prompt: str) -> np.ndarray:
        """(n_slots, embed_dim) float64; bitwise stable across processes."""
        combo = self.combo(prompt)
        return np.stack([self._row(name, frag)
                         for (name, _), frag in zip(self.template.slots, combo)])

    def index(self, prompt: str) -> int:
        try:
            return self.prompts.index(prompt)
        except ValueError:
            raise InputError(f"prompt not in corpus: {prompt!r}") from None


@dataclass
class CorpusSplit:
    seen: list[str]
    unseen: list[str]
    seed: int
    fraction: float


def split_seen_unseen(corpus: Corpus, fraction: float, seed: int) -> CorpusSplit:
    """Deterministic split; held-out prompts cover fragment values homogeneously.

    `fraction` is the seen share; |seen| = ceil(fraction * N). Unseen prompts
    are picked greedily to cover every (slot, fragment) value at least once
    when the held-out budget permits.
    """
    if not (0.0 < fraction < 1.0):
        raise ConfigError(f"fraction must be in (0, 1), got {fraction}")
    n = len(corpus)
    n_seen = int(np.ceil(fraction * n))
    if n_seen <= 0 or n_seen > n:
        raise ConfigError("split leaves an empty seen set")
    n_unseen = n - n_seen

    rng = np.random.default_rng(seed)
    order = list(rng.permutation(n))
    uncovered = {(name, frag) for name, values in corpus.template.slots for frag in values}
    unseen_idx: list[int] = []
    chosen = set()
    while len(unseen_idx) < n_unseen:
        best, best_new = None, -1
        for i in order:
            if i in chosen:
                continue
            combo = corpus.combo(corpus.prompts[i])
            new = sum(1 for name_frag in zip(corpus.template.slot_names, combo)
                      if name_frag in uncovered)
            if new > best_new:
                best, best_new = i, new
        unseen_idx.append(best)
        chosen.add(best)
        combo = corpus.combo(corpus.prompts[best])
        uncovered -= set(zip(corpus.template.slot_names, combo))
    unseen_set = set(unseen_idx)
    seen = [p for i, p in enumerate(corpus.prompts) if i not in unseen_set]
    unseen = [corpus.prompts[i] for i in sorted(unseen_idx)]
    return CorpusSplit(seen=seen, unseen=unseen, seed=seed, fraction=fraction)


class EmbeddingCache:
    """Prompt -> embedding map persisted as a JSON index plus a binary blob.

    The blob stores little-endian float64 so a round trip is bitwise exact.
    """

    def __init__(self, entries: dict[str, np.ndarray] | None = None):
        self.entries: dict[str, np.ndarray] = dict(entries or {})

    @classmethod
    def from_corpus(cls, corpus: Corpus) -> "EmbeddingCache":
        return cls({p: corpus.embedding(p) for p in corpus.prompts})

    def __getitem__(self, prompt: str) -> np.ndarray:
        try:
            return self.entries[prompt]
        except KeyError:
            raise InputError(f"prompt not cached: {prompt!r}") from None

    def save(self, base_path):
        base = Path(base_path)
        index, blob, offset = {}, [], 0
        for prompt, arr in self.entries.items():
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            index[prompt] = {"offset": offset, "shape": list(arr.shape)}
            blob.append(raw)
            offset += len(raw)
        base.with_suffix(".json").write_text(json.dumps(index, indent=1, sort_keys=True))
        base.with_suffix(".bin").write_bytes(b"".join(blob))

    @classmethod
    def load(cls, base_path) -> "EmbeddingCache":
        base = Path(base_path)
        index = json.loads(base.with_suffix(".json").read_text())
        blob = base.with_suffix(".bin").read_bytes()
        entries = {}
        for prompt, meta in index.items():
            shape = tuple(meta["shape"])
            count = int(np.prod(shape))
            start = meta["offset"]
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start).reshape(shape)
            entries[prompt] = arr.astype(np.float64)
        return cls(entries)


def load_corpus_config(d: dict) -> tuple[Corpus, float, int]:
    """Corpus plus split parameters from a config dict (see configs/*.json)."""
    try:
        template = PromptTemplate(
            template=d["template"],
            slots=tuple((name, tuple(values)) for name, values in d["slots"].items()),
        )
    except KeyError as e:
        raise ConfigError(f"corpus config missing field {e}") from None
    corpus = Corpus(template=template,
                    embed_dim=int(d.get("embed_dim", 8)),
                    embed_seed=int(d.get("embed_seed", 0)))
    return corpus, float(d.get("seen_fraction", 0.75)), int(d.get("split_seed", 0))
