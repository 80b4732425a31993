"""Prompt construction, MLLM backends, and answer normalization.

Prompt templates are byte-stable. Answers normalize SQuAD-style (lowercase,
no punctuation, no articles) with the refusal phrase collapsed to a single
canonical token, and the same normalization backs the scoring module.
"""

from __future__ import annotations

import json
import os
import re
import string
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import requests

from .caching import FileCache, answer_cache_key, hash_text
from .errors import BackendError, ConfigError, ContractError, InputError

PROMPT_MODES = ("baseline", "spotlight", "cot")

UNANSWERABLE_TOKEN = "<unanswerable>"
UNANSWERABLE_PHRASE = "Information not available."

_BASELINE_TEMPLATE = """Read the above Images and answer this question

Question: {question}

Instructions:
- DO NOT use external knowledge.
- Provide a one-word or numerical answer if possible.
- If information is unavailable, state "Information not available."
"""

_SPOTLIGHT_DIRECTIVE = (
    "Focus on the BLUE Highlighted area in images as it is more relevant to the query. "
    "First, try to answer only using the highlighted area, and if not found, then, consider whole image"
)

_COT_SUFFIX = """
Think step by step about where the answer appears before replying.
End your reply with a final line of the form:
Answer: <your final answer>
"""

_OCR_TEMPLATE = """Read the following extracted document text and answer this question

{text_blocks}
Question: {question}

Instructions:
- DO NOT use external knowledge.
- Provide a one-word or numerical answer if possible.
- If information is unavailable, state "Information not available."
"""


def build_prompt(question: str, mode: str = "baseline") -> str:
    """Render the VQA prompt for one of the modes: baseline, spotlight, cot."""
    if not question or not question.strip():
        raise InputError("question is empty")
    if mode not in PROMPT_MODES:
        raise InputError(f"unknown prompt mode {mode!r}")
    base = _BASELINE_TEMPLATE.format(question=question.strip())
    if mode == "spotlight":
        head, rest = base.split("\n", 1)
        return f"{head}\n\n{_SPOTLIGHT_DIRECTIVE}\n{rest}"
    if mode == "cot":
        return base + _COT_SUFFIX
    return base


def build_ocr_prompt(question: str, texts: Sequence[str]) -> str:
    """Prompt for the OCR-stub pipeline: extracted text instead of images."""
    if not question or not question.strip():
        raise InputError("question is empty")
    blocks = "".join(f"--- page {idx + 1} ---\n{t.strip()}\n" for idx, t in enumerate(texts))
    return _OCR_TEMPLATE.format(text_blocks=blocks, question=question.strip())


def extract_cot_answer(raw: str) -> str:
    """Final answer after the last 'Answer:' marker; the whole reply if absent."""
    marker = "Answer:"
    idx = raw.rfind(marker)
    if idx == -1:
        return raw
    return raw[idx + len(marker) :].strip().splitlines()[0].strip() if raw[idx + len(marker) :].strip() else ""


_PUNCT_TABLE = {ord(c): None for c in string.punctuation + "‘’“”"}
_ARTICLES = re.compile(r"\b(a|an|the)\b")


def normalize_answer(raw: str) -> list[str]:
    """SQuAD-style token normalization with a canonical unanswerable token."""
    s = raw.strip()
    if s.lower() == UNANSWERABLE_TOKEN:
        return [UNANSWERABLE_TOKEN]
    s = s.lower().translate(_PUNCT_TABLE)
    s = _ARTICLES.sub(" ", s)
    tokens = s.split()
    if " ".join(tokens) == "information not available":
        return [UNANSWERABLE_TOKEN]
    return tokens


@dataclass(frozen=True)
class MllmRequest:
    """One generation call: prompt, base64-PNG images in answer order."""

    prompt: str
    images: tuple[str, ...] = ()
    model_id: str = ""
    max_tokens: int = 256
    temperature: float = 0.0

    def __post_init__(self):
        if not self.prompt:
            raise InputError("request prompt is empty")
        object.__setattr__(self, "images", tuple(self.images))


@dataclass(frozen=True)
class Answer:
    raw: str
    normalized: tuple[str, ...]
    latency_ms: float
    token_usage: dict | None = None
    cache_hit: bool = False

    @classmethod
    def from_raw(cls, raw: str, latency_ms: float, token_usage: dict | None = None, cache_hit: bool = False) -> "Answer":
        return cls(raw=raw, normalized=tuple(normalize_answer(raw)), latency_ms=latency_ms, token_usage=token_usage, cache_hit=cache_hit)


class MllmBackend(Protocol):
    backend_id: str
    default_model_id: str

    def generate(self, req: MllmRequest) -> tuple[str, dict | None]: ...


def ask(
    backend: MllmBackend,
    req: MllmRequest,
    cache: FileCache | None = None,
    retries: int = 3,
    backoff_s: float = 0.25,
) -> Answer:
    """Call the backend with retries and the content-addressed answer cache.

    Empty replies come back as empty answers, not errors. Cache hits replay
    the stored reply and its original latency.
    """
    model_id = req.model_id or backend.default_model_id
    key = answer_cache_key(
        backend.backend_id, model_id, req.prompt, [hash_text(img) for img in req.images], req.max_tokens, req.temperature
    )
    if cache is not None:
        entry = cache.get(key)
        if entry is not None:
            return Answer.from_raw(
                entry["raw"], latency_ms=float(entry["latency_ms"]), token_usage=entry.get("token_usage"), cache_hit=True
            )
    last_exc: BackendError | None = None
    for attempt in range(1, max(1, retries) + 1):
        start = time.perf_counter()
        try:
            raw, usage = backend.generate(req)
        except ContractError:
            raise
        except BackendError as exc:
            last_exc = exc
            if attempt < retries:
                time.sleep(backoff_s * (2 ** (attempt - 1)))
            continue
        fixed = getattr(backend, "deterministic_latency_ms", None)
        latency_ms = fixed if fixed is not None else (time.perf_counter() - start) * 1000.0
        if cache is not None:
            cache.put(key, {"raw": raw, "latency_ms": latency_ms, "token_usage": usage})
        return Answer.from_raw(raw, latency_ms=latency_ms, token_usage=usage)
    raise BackendError(f"MLLM backend {backend.backend_id} failed after {retries} attempts: {last_exc}", attempts=retries)


class MockMllm:
    """Canned backend: maps sha256(prompt) to a reply; '*' is the fallback.

    Latency is pinned to 0.0 so offline runs are byte-reproducible.
    """

    backend_id = "mock-mllm"
    default_model_id = "mock"
    deterministic_latency_ms = 0.0

    def __init__(self, replies: dict[str, str]):
        self._replies = dict(replies)

    @classmethod
    def from_file(cls, path: str | Path) -> "MockMllm":
        try:
            return cls(json.loads(Path(path).read_text(encoding="utf-8")))
        except FileNotFoundError as exc:
            raise ConfigError(f"mock replies file not found: {path}") from exc

    def generate(self, req: MllmRequest) -> tuple[str, dict | None]:
        reply = self._replies.get(hash_text(req.prompt), self._replies.get("*", ""))
        return reply, None


class HttpMllm:
    """Chat-style JSON POST adapter; provider differences are config ('style').

    style="plain":       {"model_id", "prompt", "images_b64", "max_tokens",
                          "temperature"} -> {"text": ..., "usage": {...}?}
    style="openai_chat": OpenAI-compatible chat.completions payload with
                          data-URL image parts -> choices[0].message.content
    """

    def __init__(
        self,
        endpoint: str,
        model_id: str,
        auth_env: str | None = None,
        style: str = "plain",
        timeout_s: float = 120.0,
        max_concurrency: int = 4,
        backend_id: str | None = None,
        session: requests.Session | None = None,
    ):
        if style not in ("plain", "openai_chat"):
            raise ConfigError(f"unknown MLLM wire style {style!r}")
        self.backend_id = backend_id or f"http:{endpoint}"
        self.default_model_id = model_id
        self._endpoint = endpoint
        self._auth_env = auth_env
        self._style = style
        self._timeout_s = timeout_s
        self._limiter = threading.BoundedSemaphore(max(1, max_concurrency))
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self._auth_env:
            token = os.environ.get(self._auth_env)
            if not token:
                raise ConfigError(f"auth environment variable {self._auth_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _payload(self, req: MllmRequest) -> dict:
        model = req.model_id or self.default_model_id
        if self._style == "plain":
            return {
                "model_id": model,
                "prompt": req.prompt,
                "images_b64": list(req.images),
                "max_tokens": req.max_tokens,
                "temperature": req.temperature,
            }
        content: list[dict] = [{"type": "text", "text": req.prompt}]
        content += [
            {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{img}"}} for img in req.images
        ]
        return {
            "model": model,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }

    def generate(self, req: MllmRequest) -> tuple[str, dict | None]:
        try:
            with self._limiter:  # per-backend in-flight cap
                resp = self._session.post(self._endpoint, json=self._payload(req), headers=self._headers(), timeout=self._timeout_s)
        except requests.RequestException as exc:
            raise BackendError(f"MLLM endpoint unreachable: {exc}") from exc
        if resp.status_code >= 500:
            raise BackendError(f"MLLM endpoint returned {resp.status_code}")
        if resp.status_code != 200:
            raise ContractError(f"MLLM endpoint returned {resp.status_code}: {resp.text[:200]}")
        body = resp.json()
        try:
            if self._style == "plain":
                return str(body["text"]), body.get("usage")
            return str(body["choices"][0]["message"]["content"]), body.get("usage")
        except (KeyError, IndexError, TypeError) as exc:
            raise ContractError(f"malformed MLLM response: {exc}") from exc
