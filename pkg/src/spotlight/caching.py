"""Content-addressed response caches with atomic file writes.

Layout: {root}/answers/<sha256>.json and {root}/embeddings/<sha256>.json.
Keys hash every component that could change a response (pipeline version,
backend id, model id, full prompt and image hashes), so changing any of them
invalidates the entry. Writes go through a temp file + os.replace, which
keeps concurrent readers safe.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

PIPELINE_VERSION = "1"


def cache_key(material: dict) -> str:
    """Stable sha256 over a JSON-serializable key-material dict."""
    blob = json.dumps(material, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def hash_text(text: str) -> str:
    return hash_bytes(text.encode("utf-8"))


class FileCache:
    """One JSON document per key under a named bucket directory."""

    def __init__(self, root: str | Path, bucket: str):
        self._dir = Path(root) / bucket
        self._dir.mkdir(parents=True, exist_ok=True)

    def get(self, key: str) -> dict | None:
        path = self._dir / f"{key}.json"
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            return None  # torn write from a crashed process; treat as miss

    def put(self, key: str, value: dict) -> None:
        path = self._dir / f"{key}.json"
        fd, tmp = tempfile.mkstemp(dir=self._dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(value, fh, sort_keys=True)
            os.replace(tmp, path)
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise


def answer_cache_key(backend_id: str, model_id: str, prompt: str, image_hashes: Sequence[str], max_tokens: int, temperature: float) -> str:
    return cache_key(
        {
            "v": PIPELINE_VERSION,
            "kind": "answer",
            "backend_id": backend_id,
            "model_id": model_id,
            "prompt_sha": hash_text(prompt),
            "images": list(image_hashes),
            "max_tokens": max_tokens,
            "temperature": temperature,
        }
    )


def embedding_cache_key(backend_id: str, kind: str, content_hash: str) -> str:
    return cache_key(
        {
            "v": PIPELINE_VERSION,
            "kind": f"embedding/{kind}",
            "backend_id": backend_id,
            "content_sha": content_hash,
        }
    )


class CachedEmbedder:
    """Wrap any embedding backend with the file cache, item by item."""

    def __init__(self, backend, cache_root: str | Path):
        self._backend = backend
        self._cache = FileCache(cache_root, "embeddings")

    @property
    def descriptor(self):
        return self._backend.descriptor

    def _lookup(self, kind: str, hashes: list[str]) -> tuple[list, list[int]]:
        found: list = [None] * len(hashes)
        missing: list[int] = []
        for idx, h in enumerate(hashes):
            entry = self._cache.get(embedding_cache_key(self.descriptor.backend_id, kind, h))
            if entry is None:
                missing.append(idx)
            else:
                found[idx] = entry["values"]
        return found, missing

    def _finish(self, kind: str, hashes: list[str], found: list, missing: list[int], fresh: list):
        from .embedding import EmbeddingVector

        for idx, vec in zip(missing, fresh):
            values = [float(x) for x in vec.values]
            self._cache.put(
                embedding_cache_key(self.descriptor.backend_id, kind, hashes[idx]),
                {"dim": vec.dim, "values": values},
            )
            found[idx] = values
        return [EmbeddingVector(np.asarray(v, dtype=np.float64)) for v in found]

    def embed_texts(self, texts):
        hashes = [hash_text(t) for t in texts]
        found, missing = self._lookup("text", hashes)
        fresh = self._backend.embed_texts([texts[i] for i in missing]) if missing else []
        return self._finish("text", hashes, found, missing, fresh)

    def embed_images(self, images):
        arrays = [np.ascontiguousarray(img, dtype=np.uint8) for img in images]
        hashes = [hash_bytes(arr.tobytes() + str(arr.shape).encode()) for arr in arrays]
        found, missing = self._lookup("image", hashes)
        fresh = self._backend.embed_images([arrays[i] for i in missing]) if missing else []
        return self._finish("image", hashes, found, missing, fresh)
