"""
LLM Backend - uniform chat-completion contract

Providers:
- openai: OpenAI-style POST {base_url}/v1/chat/completions
- gemini: POST {base_url}/v1beta/models/{model}:generateContent

LLMClient sits in front of any backend (HTTP or the stylometric mock in
style_oracle.py): cache first, then the backend, then one QueryRecord in
the query log.
"""

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timezone
from typing import Callable, Optional, Tuple

import requests

from cache_engine import QueryLog, ResponseCache

logger = logging.getLogger(__name__)

# -------------------------------------------------------
# PROVIDER CONFIGURATION
# -------------------------------------------------------
PROVIDERS = {
    "openai": {"url": "https://api.openai.com", "key_env": "CODATTR_OPENAI_KEY"},
    "gemini": {"url": "https://generativelanguage.googleapis.com", "key_env": "CODATTR_GEMINI_KEY"},
}

DEFAULT_TIMEOUT = 60
MAX_RETRIES = 3
BACKOFF_BASE = 1.0
BACKOFF_CAP = 30.0
DEFAULT_MAX_IN_FLIGHT = 4


# -------------------------------------------------------
# ERRORS
# -------------------------------------------------------
class BackendError(Exception):
    pass


class BackendUnavailable(BackendError):
    pass


class RequestRejected(BackendError):
    def __init__(self, status_code: int, message: str):
        super().__init__(message)
        self.status_code = status_code


class ProtocolError(BackendError):
    pass


class BackendConfigError(BackendError):
    pass


# -------------------------------------------------------
# TYPES
# -------------------------------------------------------
@dataclass(frozen=True)
class ChatRequest:
    model: str
    user_text: str
    system_text: Optional[str] = None
    temperature: float = 0.0
    top_p: float = 1.0
    max_output_tokens: int = 256

    def __post_init__(self):
        if not self.model:
            raise ValueError("❌ ChatRequest needs a model id")
        if self.temperature < 0:
            raise ValueError(f"❌ temperature must be >= 0, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"❌ top_p must be in (0, 1], got {self.top_p}")
        if self.max_output_tokens < 1:
            raise ValueError("❌ max_output_tokens must be >= 1")
        object.__setattr__(self, "temperature", float(self.temperature))
        object.__setattr__(self, "top_p", float(self.top_p))

    @classmethod
    def from_dict(cls, data: dict) -> "ChatRequest":
        return cls(**data)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    output_tokens: int = 0
    latency: float = 0.0
    from_cache: bool = False
    retry_count: int = 0

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.output_tokens < 0:
            raise ValueError("❌ Token counts must be >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "ChatResponse":
        return cls(**data)


@dataclass(frozen=True)
class QueryRecord:
    cache_key: str
    request: ChatRequest
    response: ChatResponse
    timestamp: str
    cost: float = 0.0
    experiment: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "QueryRecord":
        return cls(
            cache_key=data["cache_key"],
            request=ChatRequest.from_dict(data["request"]),
            response=ChatResponse.from_dict(data["response"]),
            timestamp=data.get("timestamp", ""),
            cost=data.get("cost", 0.0),
            experiment=data.get("experiment", ""),
        )


def cache_key(request: ChatRequest) -> str:
    """sha256 over (model, temperature, top_p, system_text, user_text)"""
    payload = json.dumps(
        [request.model, request.temperature, request.top_p, request.system_text, request.user_text],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# -------------------------------------------------------
# HTTP BACKEND
# -------------------------------------------------------
class HttpBackend:
    """
    JSON chat-completion over HTTP with bounded retries.

    5xx, 429 and transport errors are retried with seeded exponential
    backoff (Retry-After wins on 429); any other 4xx is rejected at once.
    """

    model_id = None

    def __init__(
        self,
        provider: str = "openai",
        base_url: Optional[str] = None,
        api_key: Optional[str] = None,
        timeout: float = DEFAULT_TIMEOUT,
        max_retries: int = MAX_RETRIES,
        backoff_base: float = BACKOFF_BASE,
        seed: int = 0,
        session=None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if provider not in PROVIDERS:
            raise BackendConfigError(f"❌ Unknown provider {provider!r} (expected one of {', '.join(PROVIDERS)})")

        key_env = PROVIDERS[provider]["key_env"]
        self.api_key = api_key or os.getenv(key_env)
        if not self.api_key:
            raise BackendConfigError(f"❌ {key_env} is not set")

        self.provider = provider
        self.base_url = (base_url or PROVIDERS[provider]["url"]).rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.seed = seed
        self.session = session or requests.Session()
        self.sleep = sleep

    # ---------------------------------------------------
    # REQUEST BUILDING
    # ---------------------------------------------------
    def _build(self, request: ChatRequest) -> Tuple[str, dict, dict]:
        if self.provider == "openai":
            messages = []
            if request.system_text:
                messages.append({"role": "system", "content": request.system_text})
            messages.append({"role": "user", "content": request.user_text})
            url = f"{self.base_url}/v1/chat/completions"
            headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
            payload = {
                "model": request.model,
                "messages": messages,
                "temperature": request.temperature,
                "top_p": request.top_p,
                "max_tokens": request.max_output_tokens,
            }
            return url, headers, payload

        url = f"{self.base_url}/v1beta/models/{request.model}:generateContent"
        headers = {"x-goog-api-key": self.api_key, "Content-Type": "application/json"}
        payload = {
            "contents": [{"role": "user", "parts": [{"text": request.user_text}]}],
            "generationConfig": {
                "temperature": request.temperature,
                "topP": request.top_p,
                "maxOutputTokens": request.max_output_tokens,
            },
        }
        if request.system_text:
            payload["systemInstruction"] = {"parts": [{"text": request.system_text}]}
        return url, headers, payload

    def _parse(self, response) -> Tuple[str, int, int]:
        try:
            data = response.json()
            if self.provider == "openai":
                text = data["choices"][0]["message"]["content"]
                usage = data.get("usage") or {}
                prompt_tokens = usage.get("prompt_tokens", 0)
                output_tokens = usage.get("completion_tokens", 0)
            else:
                parts = data["candidates"][0]["content"]["parts"]
                text = "".join(part.get("text", "") for part in parts)
                usage = data.get("usageMetadata") or {}
                prompt_tokens = usage.get("promptTokenCount", 0)
                output_tokens = usage.get("candidatesTokenCount", 0)
        except (ValueError, KeyError, IndexError, TypeError, AttributeError) as e:
            raise ProtocolError(f"❌ Malformed {self.provider} response body: {e!r}")

        if not isinstance(text, str):
            raise ProtocolError(f"❌ {self.provider} response text is not a string")
        return text.strip(), int(prompt_tokens or 0), int(output_tokens or 0)

    def _backoff(self, attempt: int, rng: random.Random) -> float:
        delay = min(BACKOFF_CAP, self.backoff_base * (2 ** attempt))
        return delay + rng.uniform(0, self.backoff_base / 2)

    @staticmethod
    def _retry_after(response) -> Optional[float]:
        value = response.headers.get("Retry-After") if response.headers else None
        try:
            return min(BACKOFF_CAP, max(0.0, float(value))) if value is not None else None
        except ValueError:
            return None

    # ---------------------------------------------------
    # INVOKE
    # ---------------------------------------------------
    def invoke(self, request: ChatRequest) -> ChatResponse:
        url, headers, payload = self._build(request)
        rng = random.Random(f"{self.seed}:{cache_key(request)}")

        attempt = 0
        while True:
            started = time.monotonic()
            retry_after = None
            try:
                response = self.session.post(url, headers=headers, json=payload, timeout=self.timeout)
            except requests.RequestException as e:
                failure = f"transport error: {e}"
            else:
                status = response.status_code
                if status == 200:
                    text, prompt_tokens, output_tokens = self._parse(response)
                    return ChatResponse(
                        text=text,
                        prompt_tokens=prompt_tokens,
                        output_tokens=output_tokens,
                        latency=time.monotonic() - started,
                        retry_count=attempt,
                    )
                if status != 429 and status < 500:
                    raise RequestRejected(
                        status, f"❌ {self.provider} rejected the request: HTTP {status}: {response.text[:200]}"
                    )
                failure = f"HTTP {status}"
                if status == 429:
                    retry_after = self._retry_after(response)

            if attempt >= self.max_retries:
                raise BackendUnavailable(
                    f"❌ {self.provider} unavailable after {attempt} retries ({failure})"
                )
            delay = retry_after if retry_after is not None else self._backoff(attempt, rng)
            attempt += 1
            logger.warning("🔁 %s; retry %d/%d in %.1fs", failure, attempt, self.max_retries, delay)
            self.sleep(delay)


# -------------------------------------------------------
# CACHE-FIRST CLIENT
# -------------------------------------------------------
class LLMClient:
    """
    Shared by every worker thread. The semaphore caps in-flight backend
    calls; the cache and query log serialize their own writes.
    """

    def __init__(
        self,
        backend,
        model: Optional[str] = None,
        cache: Optional[ResponseCache] = None,
        query_log: Optional[QueryLog] = None,
        experiment: str = "",
        temperature: float = 0.0,
        top_p: float = 1.0,
        max_output_tokens: int = 256,
        system_text: Optional[str] = None,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        price: Optional[Callable[[str, int, int], float]] = None,
    ):
        self.backend = backend
        self.model = model or getattr(backend, "model_id", None)
        if not self.model:
            raise BackendConfigError("❌ No model id configured for the backend")
        self.cache = cache if cache is not None else ResponseCache()
        self.query_log = query_log
        self.experiment = experiment
        self.temperature = temperature
        self.top_p = top_p
        self.max_output_tokens = max_output_tokens
        self.system_text = system_text
        self.price = price

        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))
        self._lock = threading.Lock()
        self.cache_hits = 0
        self.backend_calls = 0

    def request(self, user_text: str) -> ChatRequest:
        return ChatRequest(
            model=self.model,
            user_text=user_text,
            system_text=self.system_text,
            temperature=self.temperature,
            top_p=self.top_p,
            max_output_tokens=self.max_output_tokens,
        )

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = cache_key(request)
        cached = self.cache.get(key)
        if cached is not None:
            with self._lock:
                self.cache_hits += 1
            return replace(QueryRecord.from_dict(cached).response, from_cache=True)

        with self._slots:
            response = self.backend.invoke(request)
        with self._lock:
            self.backend_calls += 1

        cost = self.price(request.model, response.prompt_tokens, response.output_tokens) if self.price else 0.0
        record = QueryRecord(
            cache_key=key,
            request=request,
            response=response,
            timestamp=_utc_now(),
            cost=cost,
            experiment=self.experiment,
        )
        payload = record.to_dict()
        if self.query_log is not None:
            self.query_log.append(payload)
        self.cache.put(key, payload)
        return response
