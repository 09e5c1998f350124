"""Access to chat and embedding services with retries, rate limits and a replay cache.

Every other module talks to models through :class:`Gateway`.  Providers are
small objects exposing ``chat(request) -> str`` and ``embed(request) -> list``;
the gateway adds retry with exponential backoff, a per-provider token bucket
and a write-once on-disk cache keyed by the full request.
"""

from __future__ import annotations

import json
import logging
import math
import os
import random
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import httpx

from ._util import sha256_hex

log = logging.getLogger(__name__)


class GatewayError(Exception):
    pass


class AuthError(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class ProviderError(GatewayError):
    def __init__(self, message, status=None, retryable=False):
        super().__init__(message)
        self.status = status
        self.retryable = retryable


class EmptyCompletion(GatewayError):
    pass


class DimensionMismatch(GatewayError):
    pass


class CacheCorrupt(GatewayError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    provider_id: str
    model: str
    system_prompt: str
    user_prompt: str
    max_output_tokens: int = 4096
    temperature: float = 0.0
    # Not sent to every provider; it exists so that retried generations
    # (same prompt, next iteration) get distinct cache keys.
    seed: int | None = None

    def __post_init__(self):
        if not self.system_prompt or not self.user_prompt:
            raise ValueError("prompts must be non-empty")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")

    def cache_key(self):
        return sha256_hex(json.dumps({"kind": "chat", **asdict(self)}, sort_keys=True))


@dataclass(frozen=True)
class EmbedRequest:
    provider_id: str
    model: str
    texts: tuple

    def __post_init__(self):
        object.__setattr__(self, "texts", tuple(self.texts))
        if not self.texts:
            raise ValueError("texts must be non-empty")
        if any(not t for t in self.texts):
            raise ValueError("empty text entry")

    def cache_key(self):
        payload = {"kind": "embed", "provider_id": self.provider_id, "model": self.model,
                   "texts": list(self.texts)}
        return sha256_hex(json.dumps(payload, sort_keys=True))


class Provider(Protocol):
    def chat(self, request: ChatRequest) -> str: ...

    def embed(self, request: EmbedRequest) -> list: ...


class EchoProvider:
    """Returns the user prompt unchanged. Useful for plumbing tests."""

    def chat(self, request):
        return request.user_prompt

    def embed(self, request):
        raise ProviderError("echo provider has no embeddings")


class OpenAICompatibleProvider:
    """Chat-completions style JSON over HTTPS.

    The API key is read from ``api_key_env`` at call time so that missing
    credentials surface as :class:`AuthError` on first use.
    """

    def __init__(self, base_url, api_key_env, *, timeout=120.0, transport=None,
                 send_seed=False):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.send_seed = send_seed
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _headers(self):
        key = os.environ.get(self.api_key_env) if self.api_key_env else "unused"
        if not key:
            raise AuthError(f"environment variable {self.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def _post(self, path, body):
        try:
            resp = self._client.post(self.base_url + path, json=body, headers=self._headers())
        except httpx.TransportError as exc:
            raise ProviderError(f"transport error: {exc}", retryable=True) from exc
        code = resp.status_code
        if code in (401, 403):
            raise AuthError(f"HTTP {code}: {resp.text[:200]}")
        if code == 429:
            raise RateLimited(f"HTTP 429: {resp.text[:200]}")
        if code >= 500:
            raise ProviderError(f"HTTP {code}: {resp.text[:200]}", status=code, retryable=True)
        if code >= 400:
            raise ProviderError(f"HTTP {code}: {resp.text[:200]}", status=code)
        try:
            return resp.json()
        except ValueError as exc:
            raise ProviderError(f"non-JSON response body: {resp.text[:200]}") from exc

    def chat(self, request):
        body = {
            "model": request.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
        }
        if self.send_seed and request.seed is not None:
            body["seed"] = request.seed % (2**31)
        data = self._post("/chat/completions", body)
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected response shape: {str(data)[:200]}") from exc

    def embed(self, request):
        data = self._post("/embeddings", {"model": request.model, "input": list(request.texts)})
        try:
            rows = sorted(data["data"], key=lambda r: r["index"])
            return [list(map(float, r["embedding"])) for r in rows]
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"unexpected response shape: {str(data)[:200]}") from exc


class TokenBucket:
    """Thread-safe token bucket; ``rate`` tokens per second up to ``capacity``."""

    def __init__(self, rate, capacity=None, clock=time.monotonic, sleep=time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = float(rate)
        self.capacity = float(capacity if capacity is not None else max(1.0, rate))
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self, n=1.0):
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= n:
                    self._tokens -= n
                    return
                wait = (n - self._tokens) / self.rate
            self._sleep(wait)


class DiskCache:
    """One file per key; content is the raw payload. First writer wins."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, key):
        return self.root / key

    def get(self, key):
        p = self.path(key)
        try:
            raw = p.read_bytes()
        except FileNotFoundError:
            return None
        except OSError as exc:
            raise CacheCorrupt(f"cannot read cache entry {key}: {exc}") from exc
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CacheCorrupt(f"cache entry {key} is not valid UTF-8") from exc

    def put(self, key, payload):
        """Store ``payload`` unless an entry exists; return the stored payload."""
        p = self.path(key)
        tmp = self.root / f".{key}.{os.getpid()}.{threading.get_ident()}.tmp"
        tmp.write_bytes(payload.encode("utf-8"))
        try:
            os.link(tmp, p)
        except FileExistsError:
            existing = self.get(key)
            return existing if existing is not None else payload
        finally:
            tmp.unlink(missing_ok=True)
        return payload

    def delete(self, key):
        self.path(key).unlink(missing_ok=True)


@dataclass
class GatewayStats:
    live_calls: int = 0
    attempts: int = 0
    cache_hits: int = 0
    last_attempts: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def bump(self, **kw):
        with self._lock:
            for k, v in kw.items():
                setattr(self, k, getattr(self, k) + v)


class Gateway:
    def __init__(self, providers=None, cache_dir=None, *, max_attempts=6, base_delay=1.0,
                 max_delay=60.0, rate_limits=None, sleep=time.sleep, jitter=True):
        self.providers = dict(providers or {})
        self.cache = DiskCache(cache_dir) if cache_dir else None
        self.max_attempts = max_attempts
        self.base_delay = base_delay
        self.max_delay = max_delay
        self._sleep = sleep
        self._jitter = jitter
        self.buckets = {pid: TokenBucket(r) for pid, r in (rate_limits or {}).items()}
        self.stats = GatewayStats()
        self._key_locks = {}
        self._key_locks_guard = threading.Lock()

    def __deepcopy__(self, memo):
        # A gateway is a shared service (cache, locks, rate limits); copies share it.
        return self

    def register(self, provider_id, provider, rate_per_sec=None):
        self.providers[provider_id] = provider
        if rate_per_sec:
            self.buckets[provider_id] = TokenBucket(rate_per_sec)

    def _provider(self, provider_id):
        try:
            return self.providers[provider_id]
        except KeyError:
            raise AuthError(f"no provider registered under id {provider_id!r}") from None

    def _key_lock(self, key):
        with self._key_locks_guard:
            return self._key_locks.setdefault(key, threading.Lock())

    def _with_retry(self, provider_id, fn):
        attempt = 0
        while True:
            attempt += 1
            self.stats.bump(attempts=1)
            bucket = self.buckets.get(provider_id)
            if bucket is not None:
                bucket.acquire()
            try:
                result = fn()
                self.stats.last_attempts = attempt
                return result
            except RateLimited:
                if attempt >= self.max_attempts:
                    self.stats.last_attempts = attempt
                    raise
            except ProviderError as exc:
                if not exc.retryable or attempt >= self.max_attempts:
                    self.stats.last_attempts = attempt
                    raise
            delay = min(self.max_delay, self.base_delay * 2 ** (attempt - 1))
            if self._jitter:
                delay *= 0.5 + random.random() / 2
            log.debug("retrying %s after %.2fs (attempt %d)", provider_id, delay, attempt)
            self._sleep(delay)

    def cached_call(self, request, live, encode=lambda x: x, decode=lambda x: x):
        """Serve ``request`` from cache or via ``live()``; concurrent misses call once."""
        if self.cache is None:
            self.stats.bump(live_calls=1)
            return live()
        key = request.cache_key()
        with self._key_lock(key):
            hit = self.cache.get(key)
            if hit is not None:
                self.stats.bump(cache_hits=1)
                return decode(hit)
            self.stats.bump(live_calls=1)
            result = live()
            stored = self.cache.put(key, encode(result))
            return decode(stored)

    def chat(self, request: ChatRequest) -> str:
        provider = self._provider(request.provider_id)

        def live():
            text = self._with_retry(request.provider_id, lambda: provider.chat(request))
            if not text or not text.strip():
                raise EmptyCompletion(f"blank completion from {request.provider_id}/{request.model}")
            return text

        return self.cached_call(request, live)

    def embed(self, request: EmbedRequest) -> list:
        provider = self._provider(request.provider_id)

        def live():
            vecs = self._with_retry(request.provider_id, lambda: provider.embed(request))
            check_vectors(vecs, len(request.texts))
            return vecs

        def decode(raw):
            try:
                vecs = json.loads(raw)
            except ValueError as exc:
                raise CacheCorrupt(f"embedding cache entry is not JSON: {exc}") from exc
            check_vectors(vecs, len(request.texts))
            return vecs

        return self.cached_call(request, live, encode=json.dumps, decode=decode)


def check_vectors(vecs: Sequence, n_expected: int):
    if len(vecs) != n_expected:
        raise DimensionMismatch(f"expected {n_expected} vectors, got {len(vecs)}")
    dims = {len(v) for v in vecs}
    if len(dims) > 1:
        raise DimensionMismatch(f"ragged embedding dimensions {sorted(dims)}")
    for v in vecs:
        if not all(math.isfinite(x) for x in v):
            raise ProviderError("non-finite embedding value")


@dataclass(frozen=True)
class ModelRef:
    """Which provider/model to call, with its sampling parameters."""

    provider_id: str
    model: str
    temperature: float = 0.0
    max_output_tokens: int = 4096

    def request(self, system_prompt, user_prompt, seed=None):
        return ChatRequest(self.provider_id, self.model, system_prompt, user_prompt,
                           self.max_output_tokens, self.temperature, seed)
