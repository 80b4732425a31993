"""Config file loading and backend construction.

Config is a JSON document; the CLI resolves values with precedence
flags > environment > config file > defaults. Backends are declared as
{"kind": ...} blocks so providers are configuration, not code forks.

Recognized blocks:
  embedding: {"kind": "synthetic"}
             {"kind": "http", "endpoint", "dim", "backend_id"?, "auth_env"?,
              "batch_size"?, "parallelism"?, "retries"?, "timeout_s"?}
  mllm:      {"kind": "mock", "replies": <path>} or {"kind": "mock",
              "replies_inline": {...}}
             {"kind": "mock_logits", "logits": {...}}
             {"kind": "http", "endpoint", "model_id", "auth_env"?,
              "style"?: "plain"|"openai_chat", "timeout_s"?,
              "max_concurrency"?}
Environment: SPOTLIGHT_CONFIG (config path), SPOTLIGHT_CACHE_DIR,
SPOTLIGHT_SEED; auth tokens come from the variables the config names.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .answering import HttpMllm, MockMllm
from .caching import CachedEmbedder
from .embedding import HttpEmbedder, SyntheticEmbedder
from .errors import ConfigError

CONFIG_ENV_VAR = "SPOTLIGHT_CONFIG"
CACHE_ENV_VAR = "SPOTLIGHT_CACHE_DIR"
SEED_ENV_VAR = "SPOTLIGHT_SEED"


def load_config_file(path: str | Path | None) -> dict:
    """Load the JSON config; falls back to SPOTLIGHT_CONFIG, then empty."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return doc


def resolve_setting(flag_value, env_var: str, file_value, default):
    """flags > env > file > default."""
    if flag_value is not None:
        return flag_value
    env_value = os.environ.get(env_var) if env_var else None
    if env_value is not None:
        return env_value
    if file_value is not None:
        return file_value
    return default


def build_embedding_backend(cfg: dict, cache_dir: str | None = None):
    kind = cfg.get("kind", "synthetic")
    if kind == "synthetic":
        backend = SyntheticEmbedder()
    elif kind == "http":
        try:
            backend = HttpEmbedder(
                endpoint=cfg["endpoint"],
                dim=int(cfg["dim"]),
                backend_id=cfg.get("backend_id"),
                auth_env=cfg.get("auth_env"),
                batch_size=int(cfg.get("batch_size", 16)),
                parallelism=int(cfg.get("parallelism", 8)),
                retries=int(cfg.get("retries", 3)),
                timeout_s=float(cfg.get("timeout_s", 30.0)),
            )
        except KeyError as exc:
            raise ConfigError(f"http embedding backend config missing {exc}") from exc
    else:
        raise ConfigError(f"unknown embedding backend kind {kind!r}")
    if cache_dir:
        return CachedEmbedder(backend, cache_dir)
    return backend


def build_mllm_backend(cfg: dict):
    kind = cfg.get("kind")
    if kind == "mock":
        if "replies_inline" in cfg:
            return MockMllm(cfg["replies_inline"])
        if "replies" in cfg:
            return MockMllm.from_file(cfg["replies"])
        raise ConfigError("mock MLLM config needs 'replies' (path) or 'replies_inline'")
    if kind == "mock_logits":
        from .occlusion import ConstantLogitsBackend

        if "logits" not in cfg:
            raise ConfigError("mock_logits MLLM config needs a 'logits' map")
        return ConstantLogitsBackend(cfg["logits"])
    if kind == "http":
        try:
            return HttpMllm(
                endpoint=cfg["endpoint"],
                model_id=cfg["model_id"],
                auth_env=cfg.get("auth_env"),
                style=cfg.get("style", "plain"),
                timeout_s=float(cfg.get("timeout_s", 120.0)),
                max_concurrency=int(cfg.get("max_concurrency", 4)),
                backend_id=cfg.get("backend_id"),
            )
        except KeyError as exc:
            raise ConfigError(f"http MLLM backend config missing {exc}") from exc
    raise ConfigError(f"unknown MLLM backend kind {kind!r}")
