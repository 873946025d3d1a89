"""Chat-completions client with a content-addressed NDJSON response cache.

In replay mode the cache is the only source of responses and the network is
never touched. In live mode cached responses are reused and new ones are
appended to the cache file.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import httpx

from ..core import LabelSchema
from .scoring import parse_response


class CompletionError(RuntimeError):
    """Network, HTTP or authentication failure in live mode."""


class CacheMiss(LookupError):
    def __init__(self, prompt_hash: str):
        super().__init__(f"no cached completion for prompt_hash {prompt_hash}")
        self.prompt_hash = prompt_hash


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-3.5-turbo"
    token_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    mode: str = "replay"  # "replay" | "live"
    cache_path: str | None = None
    min_interval: float = 0.0
    timeout: float = 60.0

    def __post_init__(self):
        if self.mode not in ("replay", "live"):
            raise ValueError(f"mode must be 'replay' or 'live', got {self.mode!r}")

    @classmethod
    def from_json(cls, obj: dict) -> "EndpointConfig":
        if "token" in obj or "api_key" in obj:
            raise ValueError("auth tokens are read from the environment only; name the variable in token_env")
        return cls(**obj)


@dataclass(frozen=True)
class CompletionRecord:
    prompt_hash: str
    raw_response: str
    model: str
    temperature: float
    timestamp: str
    parsed: int | None = None

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("parsed")
        return d


def prompt_hash(prompt: str, model: str, temperature: float) -> str:
    payload = json.dumps({"prompt": prompt, "model": model, "temperature": temperature}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class CompletionCache:
    """NDJSON file of CompletionRecords; many readers, one writer at a time."""

    def __init__(self, path):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._records: dict[str, CompletionRecord] = {}
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        obj = json.loads(line)
                        obj.pop("parsed", None)
                        rec = CompletionRecord(**obj)
                        self._records.setdefault(rec.prompt_hash, rec)

    def __len__(self):
        return len(self._records)

    def get(self, key: str) -> CompletionRecord | None:
        return self._records.get(key)

    def add(self, rec: CompletionRecord) -> None:
        with self._lock:
            self._records[rec.prompt_hash] = rec
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


class _RateLimiter:
    def __init__(self):
        self._lock = threading.Lock()
        self._last = 0.0

    def wait(self, interval: float) -> None:
        if interval <= 0:
            return
        with self._lock:
            delay = self._last + interval - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            self._last = time.monotonic()


_limiter = _RateLimiter()
_caches: dict[str, CompletionCache] = {}


def _cache_for(config: EndpointConfig) -> CompletionCache:
    key = str(Path(config.cache_path).resolve()) if config.cache_path else ""
    if key not in _caches:
        _caches[key] = CompletionCache(config.cache_path)
    return _caches[key]


def _with_parsed(rec: CompletionRecord, schema: LabelSchema | None) -> CompletionRecord:
    if schema is None:
        return rec
    return CompletionRecord(rec.prompt_hash, rec.raw_response, rec.model, rec.temperature, rec.timestamp,
                            parse_response(rec.raw_response, schema))


def _post(prompt: str, config: EndpointConfig, transport=None) -> str:
    token = os.environ.get(config.token_env)
    if not token:
        raise CompletionError(f"auth token environment variable {config.token_env} is not set")
    body = {
        "model": config.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": config.temperature,
    }
    url = config.base_url.rstrip("/") + "/chat/completions"
    try:
        with httpx.Client(transport=transport, timeout=config.timeout) as client:
            resp = client.post(url, json=body, headers={"Authorization": f"Bearer {token}"})
    except httpx.HTTPError as exc:
        raise CompletionError(f"network failure calling {url}: {exc}") from exc
    if resp.status_code in (401, 403):
        raise CompletionError(f"authentication rejected by {url} (HTTP {resp.status_code})")
    if resp.status_code >= 400:
        raise CompletionError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
    try:
        return resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise CompletionError(f"unexpected response shape from {url}") from exc


def complete(prompt: str, config: EndpointConfig, schema: LabelSchema | None = None, *, cache: CompletionCache | None = None, transport=None) -> CompletionRecord:
    cache = cache if cache is not None else _cache_for(config)
    key = prompt_hash(prompt, config.model, config.temperature)
    hit = cache.get(key)
    if hit is not None:
        return _with_parsed(hit, schema)
    if config.mode == "replay":
        raise CacheMiss(key)
    _limiter.wait(config.min_interval)
    raw = _post(prompt, config, transport)
    rec = CompletionRecord(key, raw, config.model, config.temperature, datetime.now(timezone.utc).isoformat())
    cache.add(rec)
    return _with_parsed(rec, schema)
