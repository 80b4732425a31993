"""Query cleaning, embedding backends, cosine scoring, and patch selection.

Similarity between a cleaned query and each grid patch picks the cell most
likely to hold the answer; the winner's softmax probability over all n*n
scores becomes the confidence that drives the attention mask downstream.
"""

from __future__ import annotations

import base64
import hashlib
import io
import math
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
import requests
from PIL import Image

from .errors import BackendError, ConfigError, ContractError, InputError
from .pages import GridSpec, NormPoint, PageImage, Patch, grid_slice, patch_center
from .stopwords import STOPWORDS


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-length real vector; finite entries and nonzero norm enforced."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise InputError(f"embedding must be a nonempty 1-D vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InputError("embedding contains non-finite values")
        if float(np.linalg.norm(arr)) == 0.0:
            raise InputError("zero-norm embedding rejected")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class EmbeddingBackendDescriptor:
    """Identity of an embedding backend; backend_id participates in cache keys."""

    backend_id: str
    dim: int
    kind: str  # "http" or "synthetic"


class EmbeddingBackend(Protocol):
    descriptor: EmbeddingBackendDescriptor

    def embed_texts(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...

    def embed_images(self, images: Sequence[np.ndarray]) -> list[EmbeddingVector]: ...


@dataclass(frozen=True)
class SelectionResult:
    """Winning patch for one page: indices, score matrix, softmax confidence."""

    page_id: str
    i_star: int
    j_star: int
    sims: tuple[tuple[float, ...], ...]
    p: float
    center: NormPoint

    def __post_init__(self):
        n = len(self.sims)
        if n < 1 or any(len(row) != n for row in self.sims):
            raise InputError("sims must be a square matrix")
        if not (1 <= self.i_star <= n and 1 <= self.j_star <= n):
            raise InputError(f"winner ({self.i_star},{self.j_star}) out of range for n={n}")
        flat = [s for row in self.sims for s in row]
        if any(not (-1.0 - 1e-9 <= s <= 1.0 + 1e-9) for s in flat):
            raise InputError("similarities must lie in [-1, 1]")
        winner = self.sims[self.i_star - 1][self.j_star - 1]
        if winner < max(flat) - 1e-12:
            raise InputError("winner similarity is not the matrix maximum")
        if abs(self.p - softmax_confidence(flat, winner)) > 1e-9:
            raise InputError("p does not match the softmax of the score matrix")

    @property
    def n(self) -> int:
        return len(self.sims)

    def to_dict(self) -> dict:
        return {
            "page_id": self.page_id,
            "i_star": self.i_star,
            "j_star": self.j_star,
            "p": self.p,
            "center": {"xn": self.center.xn, "yn": self.center.yn},
            "sims": [list(row) for row in self.sims],
        }


def softmax_confidence(scores: Sequence[float], winner: float) -> float:
    """Numerically stabilized softmax evaluated at the winning score."""
    m = max(scores)
    denom = sum(math.exp(s - m) for s in scores)
    return math.exp(winner - m) / denom


_POSSESSIVE = re.compile(r"['’]s\b")
_EDGE_PUNCT = re.compile(r"^\W+|\W+$")
_INNER_PUNCT = re.compile(r"[^\w]")

QUERY_CLEAN_PROMPT = (
    "Rewrite this document-search query as a short list of key content words. "
    "Remove stop words and filler, keep names and numbers, preserve word order. "
    "Reply with the cleaned query on a single line and nothing else.\n"
    "Query: {query}"
)


def clean_query(q: str, mode: str = "rule_based", mllm=None) -> str:
    """Reduce a question to its content words.

    rule_based lowercases, drops possessive 's, strips punctuation (kept
    inside numeric tokens like 85.07), and removes shipped stopwords while
    preserving order. llm delegates to the configured MLLM backend and
    returns its reply trimmed to one line.
    """
    if not q or not q.strip():
        raise InputError("query is empty")
    if mode == "rule_based":
        s = _POSSESSIVE.sub("", q.strip().lower())
        kept = []
        for tok in s.split():
            tok = _EDGE_PUNCT.sub("", tok)
            if not any(c.isdigit() for c in tok):
                tok = _INNER_PUNCT.sub("", tok)
            if tok and tok not in STOPWORDS:
                kept.append(tok)
        return " ".join(kept)
    if mode == "llm":
        if mllm is None:
            raise ConfigError("clean_query mode 'llm' requires a configured MLLM backend")
        from .answering import MllmRequest, ask

        reply = ask(mllm, MllmRequest(prompt=QUERY_CLEAN_PROMPT.format(query=q.strip()), images=())).raw
        lines = reply.strip().splitlines()
        return lines[0].strip() if lines else ""
    raise InputError(f"unknown clean_query mode: {mode!r}")


def cosine_sim(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """Cosine similarity u.v / (|u||v|), clamped to [-1, 1] against rounding."""
    if u.dim != v.dim:
        raise InputError(f"dimension mismatch: {u.dim} vs {v.dim}")
    nu = float(np.linalg.norm(u.values))
    nv = float(np.linalg.norm(v.values))
    if nu == 0.0 or nv == 0.0:
        raise InputError("cosine similarity undefined for zero-norm vector")
    return float(np.clip(float(np.dot(u.values, v.values)) / (nu * nv), -1.0, 1.0))


def embed_text(backend: EmbeddingBackend, text: str) -> EmbeddingVector:
    """Embed one text; the result must match the backend's declared dim."""
    if not text or not text.strip():
        raise InputError("cannot embed empty text")
    vec = backend.embed_texts([text])[0]
    if vec.dim != backend.descriptor.dim:
        raise ContractError(f"backend {backend.descriptor.backend_id} returned dim {vec.dim}, declared {backend.descriptor.dim}")
    return vec


def embed_patches(backend: EmbeddingBackend, patches: Sequence[Patch | np.ndarray]) -> list[EmbeddingVector]:
    """Embed cropped patch images, outputs aligned with inputs."""
    images = [p.pixels if isinstance(p, Patch) else np.asarray(p) for p in patches]
    if not images:
        return []
    vecs = backend.embed_images(images)
    if len(vecs) != len(images):
        raise ContractError(f"backend returned {len(vecs)} vectors for {len(images)} images")
    for vec in vecs:
        if vec.dim != backend.descriptor.dim:
            raise ContractError(f"backend {backend.descriptor.backend_id} returned dim {vec.dim}, declared {backend.descriptor.dim}")
    return vecs


def select_patch(q_vec: EmbeddingVector, patch_vecs: Sequence[EmbeddingVector], page_id: str = "") -> SelectionResult:
    """Pick the patch with the highest cosine similarity to the query.

    Ties break to the first maximum in row-major order. The confidence p is
    the stabilized softmax over all n*n similarities, evaluated at the winner.
    """
    count = len(patch_vecs)
    n = math.isqrt(count)
    if n * n != count or count == 0:
        raise InputError(f"expected a square number of patch vectors, got {count}")
    flat = [cosine_sim(v, q_vec) for v in patch_vecs]
    best = max(range(count), key=lambda idx: (flat[idx], -idx))
    i_star, j_star = best // n + 1, best % n + 1
    sims = tuple(tuple(flat[r * n : (r + 1) * n]) for r in range(n))
    return SelectionResult(
        page_id=page_id,
        i_star=i_star,
        j_star=j_star,
        sims=sims,
        p=softmax_confidence(flat, flat[best]),
        center=patch_center(i_star, j_star, GridSpec(n)),
    )


def select_from_page(
    page: PageImage,
    query: str,
    backend: EmbeddingBackend,
    grid: GridSpec,
    clean_mode: str = "rule_based",
    mllm=None,
) -> SelectionResult:
    """Full selection for one page: clean, tile, embed, pick."""
    cleaned = clean_query(query, mode=clean_mode, mllm=mllm)
    q_vec = embed_text(backend, cleaned if cleaned.strip() else query)
    patches = grid_slice(page, grid)
    vecs = embed_patches(backend, patches)
    return select_patch(q_vec, vecs, page_id=page.id)


# --- synthetic backend -------------------------------------------------------
#
# Test-oriented backend with controllable geometry. Images map to a feature of
# marker-color coverage (8 dims saturating at 20% fill), a signed background
# dim (+1 empty, -1 saturated), and a small mean-color tail. Marker-name
# queries map to +1 on the named markers and -1 on background, so a patch
# filled with the queried marker scores near +1 while plain background scores
# near -1/sqrt(2): enough softmax mass for the attention stage to draw.

MARKER_COLORS: dict[str, tuple[int, int, int]] = {
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
    "magenta": (255, 0, 255),
    "cyan": (0, 255, 255),
    "orange": (255, 165, 0),
    "teal": (0, 128, 128),
}

_MARKER_TOL = 8
_MARKER_GAIN = 5.0
_COLOR_WEIGHT = 0.1
SYNTHETIC_DIM = len(MARKER_COLORS) + 1 + 3


class SyntheticEmbedder:
    """Deterministic in-process embedder for tests and offline runs."""

    def __init__(self):
        self.descriptor = EmbeddingBackendDescriptor(
            backend_id="synthetic-marker-v1", dim=SYNTHETIC_DIM, kind="synthetic"
        )

    def embed_texts(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [self._embed_text(t) for t in texts]

    def embed_images(self, images: Sequence[np.ndarray]) -> list[EmbeddingVector]:
        return [self._embed_image(np.asarray(img)) for img in images]

    def _embed_image(self, pixels: np.ndarray) -> EmbeddingVector:
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise InputError(f"synthetic embedder expects (H, W, 3) images, got {pixels.shape}")
        px = pixels.astype(np.int16)
        total = px.shape[0] * px.shape[1]
        fracs = []
        for rgb in MARKER_COLORS.values():
            hit = np.all(np.abs(px - np.array(rgb, dtype=np.int16)) <= _MARKER_TOL, axis=2)
            fracs.append(float(np.count_nonzero(hit)) / total)
        marker = [min(_MARKER_GAIN * f, 1.0) for f in fracs]
        background = 1.0 - 2.0 * min(_MARKER_GAIN * sum(fracs), 1.0)
        color = (_COLOR_WEIGHT * px.reshape(-1, 3).mean(axis=0) / 255.0).tolist()
        return EmbeddingVector(np.array(marker + [background] + color))

    def _embed_text(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise InputError("cannot embed empty text")
        tokens = set(re.findall(r"[a-z0-9]+", text.lower()))
        marker = [1.0 if name in tokens else 0.0 for name in MARKER_COLORS]
        if any(marker):
            return EmbeddingVector(np.array(marker + [-1.0, 0.0, 0.0, 0.0]))
        # No marker keyword: deterministic pseudo-direction in the color tail.
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        color = [0.25 + 0.75 * b / 255.0 for b in digest[:3]]
        return EmbeddingVector(np.array([0.0] * len(MARKER_COLORS) + [0.0] + color))


# --- HTTP backend ------------------------------------------------------------
#
# Wire contract (JSON over POST):
#   {endpoint}/embed_text  {"texts": [...]}       -> {"embeddings": [[...]...], "dim": d}
#   {endpoint}/embed_image {"images_b64": [...]}  -> same shape
# Images travel as base64 PNG. An auth token, when configured, is read from
# the named environment variable and sent as a Bearer header.


class HttpEmbedder:
    def __init__(
        self,
        endpoint: str,
        dim: int,
        backend_id: str | None = None,
        auth_env: str | None = None,
        batch_size: int = 16,
        parallelism: int = 8,
        retries: int = 3,
        backoff_s: float = 0.25,
        timeout_s: float = 30.0,
        session: requests.Session | None = None,
    ):
        self.descriptor = EmbeddingBackendDescriptor(
            backend_id=backend_id or f"http:{endpoint}", dim=dim, kind="http"
        )
        self._endpoint = endpoint.rstrip("/")
        self._auth_env = auth_env
        self._batch_size = max(1, batch_size)
        self._parallelism = max(1, parallelism)
        self._retries = max(1, retries)
        self._backoff_s = backoff_s
        self._timeout_s = timeout_s
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self._auth_env:
            token = os.environ.get(self._auth_env)
            if not token:
                raise ConfigError(f"auth environment variable {self._auth_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, route: str, payload: dict, expected: int) -> list[EmbeddingVector]:
        url = f"{self._endpoint}/{route}"
        headers = self._headers()
        last_exc: Exception | None = None
        for attempt in range(1, self._retries + 1):
            try:
                resp = self._session.post(url, json=payload, headers=headers, timeout=self._timeout_s)
            except requests.RequestException as exc:
                last_exc = exc
                if attempt < self._retries:
                    time.sleep(self._backoff_s * (2 ** (attempt - 1)))
                continue
            if resp.status_code >= 500:
                last_exc = BackendError(f"{url} returned {resp.status_code}", attempts=attempt)
                if attempt < self._retries:
                    time.sleep(self._backoff_s * (2 ** (attempt - 1)))
                continue
            if resp.status_code != 200:
                raise ContractError(f"{url} returned {resp.status_code}: {resp.text[:200]}")
            return self._parse(resp.json(), expected, url)
        raise BackendError(f"{url} unreachable after {self._retries} attempts: {last_exc}", attempts=self._retries)

    def _parse(self, body: dict, expected: int, url: str) -> list[EmbeddingVector]:
        try:
            embeddings = body["embeddings"]
            dim = int(body["dim"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ContractError(f"{url}: malformed response body ({exc})") from exc
        if dim != self.descriptor.dim:
            raise ContractError(f"{url}: response dim {dim} != declared {self.descriptor.dim}")
        if len(embeddings) != expected:
            raise ContractError(f"{url}: got {len(embeddings)} embeddings for {expected} inputs")
        out = []
        for row in embeddings:
            if len(row) != self.descriptor.dim:
                raise ContractError(f"{url}: vector length {len(row)} != declared dim {self.descriptor.dim}")
            try:
                out.append(EmbeddingVector(np.asarray(row, dtype=np.float64)))
            except InputError as exc:
                raise ContractError(f"{url}: invalid embedding ({exc})") from exc
        return out

    def _batched(self, items: list, route: str, key: str) -> list[EmbeddingVector]:
        chunks = [items[i : i + self._batch_size] for i in range(0, len(items), self._batch_size)]
        if len(chunks) <= 1:
            return self._post(route, {key: items}, len(items)) if items else []
        with ThreadPoolExecutor(max_workers=self._parallelism) as pool:
            results = list(pool.map(lambda c: self._post(route, {key: c}, len(c)), chunks))
        return [v for chunk in results for v in chunk]

    def embed_texts(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return self._batched(list(texts), "embed_text", "texts")

    def embed_images(self, images: Sequence[np.ndarray]) -> list[EmbeddingVector]:
        encoded = [encode_image_b64(np.asarray(img)) for img in images]
        return self._batched(encoded, "embed_image", "images_b64")


def encode_image_b64(pixels: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")
