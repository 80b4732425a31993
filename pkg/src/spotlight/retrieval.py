"""Open-domain page retrieval and distractor injection.

The corpus index holds one whole-page embedding per page and is an exact
cosine scan (no ANN); desk-scale corpora don't need more. Index files are
plain JSON stamped with the backend id so a mismatched query-time backend is
rejected instead of silently scoring garbage.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import EmbeddingBackend, EmbeddingVector, cosine_sim
from .errors import ConfigError, InputError
from .pages import PageImage

INDEX_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CorpusIndex:
    entries: tuple[tuple[str, EmbeddingVector], ...]
    backend_id: str
    built_at: str

    def __post_init__(self):
        ids = [page_id for page_id, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise InputError("corpus index has duplicate page ids")
        dims = {vec.dim for _, vec in self.entries}
        if len(dims) > 1:
            raise InputError(f"corpus index mixes embedding dims: {sorted(dims)}")

    @property
    def page_ids(self) -> list[str]:
        return [page_id for page_id, _ in self.entries]

    def require_backend(self, backend_id: str) -> None:
        if backend_id != self.backend_id:
            raise ConfigError(
                f"index was built with backend {self.backend_id!r} but queried with {backend_id!r}"
            )

    def save(self, path: str | Path) -> None:
        doc = {
            "version": INDEX_SCHEMA_VERSION,
            "backend_id": self.backend_id,
            "built_at": self.built_at,
            "dim": self.entries[0][1].dim if self.entries else 0,
            "entries": [
                {"page_id": page_id, "vector": [float(x) for x in vec.values]} for page_id, vec in self.entries
            ],
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CorpusIndex":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"corpus index not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"corpus index {path} is not valid JSON: {exc}") from exc
        if doc.get("version") != INDEX_SCHEMA_VERSION:
            raise InputError(f"unsupported index version {doc.get('version')!r}")
        entries = tuple(
            (e["page_id"], EmbeddingVector(np.asarray(e["vector"], dtype=np.float64))) for e in doc["entries"]
        )
        return cls(entries=entries, backend_id=doc["backend_id"], built_at=doc["built_at"])


@dataclass(frozen=True)
class RetrievalResult:
    """Page ids with scores in non-increasing order."""

    ranked: tuple[tuple[str, float], ...]

    def __post_init__(self):
        scores = [s for _, s in self.ranked]
        if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
            raise InputError("retrieval scores must be non-increasing")

    @property
    def page_ids(self) -> list[str]:
        return [page_id for page_id, _ in self.ranked]


def index_corpus(pages: Sequence[PageImage], backend: EmbeddingBackend) -> CorpusIndex:
    """Embed every page once; any backend failure rejects the whole build."""
    if not pages:
        raise InputError("cannot index an empty corpus")
    ids = [p.id for p in pages]
    if len(set(ids)) != len(ids):
        raise InputError("corpus pages must have unique ids")
    vecs = backend.embed_images([p.pixels for p in pages])
    if len(vecs) != len(pages):
        raise InputError(f"backend returned {len(vecs)} vectors for {len(pages)} pages")
    return CorpusIndex(
        entries=tuple(zip(ids, vecs)),
        backend_id=backend.descriptor.backend_id,
        built_at=datetime.now(timezone.utc).isoformat(),
    )


def retrieve_topk(
    query_vec: EmbeddingVector,
    index: CorpusIndex,
    k: int,
    backend_id: str | None = None,
) -> RetrievalResult:
    """Exact top-k cosine scan; ties order by page id; k beyond the corpus
    just returns the full ranking."""
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if not index.entries:
        raise InputError("cannot query an empty index")
    if backend_id is not None:
        index.require_backend(backend_id)
    scored = [(page_id, cosine_sim(vec, query_vec)) for page_id, vec in index.entries]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return RetrievalResult(ranked=tuple(scored[:k]))


def inject_distractors(
    relevant_pages: Sequence[str],
    pool: Sequence[str],
    m: int,
    seed: int,
) -> list[str]:
    """Mix m seeded-random pool pages into the relevant set.

    m=0 is a no-op that preserves the original order; otherwise the combined
    list is shuffled deterministically (python's Mersenne Twister, so the
    same seed reproduces the same order on any platform). The pool must be
    disjoint from the relevant pages; nothing is ever dropped or duplicated.
    """
    if m < 0:
        raise InputError(f"distractor count must be >= 0, got {m}")
    if m > len(pool):
        raise InputError(f"asked for {m} distractors but pool has {len(pool)}")
    relevant = list(relevant_pages)
    overlap = set(relevant) & set(pool)
    if overlap:
        raise InputError(f"distractor pool overlaps relevant pages: {sorted(overlap)[:3]}")
    if len(set(relevant)) != len(relevant) or len(set(pool)) != len(pool):
        raise InputError("relevant pages and pool must each be duplicate-free")
    if m == 0:
        return relevant
    rng = random.Random(seed)
    combined = relevant + rng.sample(list(pool), m)
    rng.shuffle(combined)
    return combined
