"""Uniform network access to text-generation and MT backends.

Wire contracts (chosen here so any hosted or local adapter can implement them):

chat_llm   POST {model, messages:[{role,content}], temperature, max_tokens, seed?}
           -> 200 {choices:[{message:{content}}]}
seq2seq_mt POST {model, source_lang, target_lang, texts:[...], beam_size}
           -> 200 {translations:[str | {"error": str}, ...]}
           -> 422 {"error": "unsupported_direction"} for unknown pairs

Retries apply to timeouts/5xx/connection resets only, with exponential
backoff; 4xx means misconfiguration and is never retried. Credentials come
exclusively from the profile's named environment variable. The gateway bounds
in-flight requests per profile and may be shared across threads.
"""
from __future__ import annotations

import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

from . import mock_backend
from .errors import (
    CapabilityError,
    ConfigurationError,
    ContractError,
    EmptyOutputError,
    TransportError,
)
from .model import LangCode, stable_hash

logger = logging.getLogger(__name__)

BACKEND_KINDS = ("chat_llm", "seq2seq_mt", "mock")
_TRANSLATE_SUBBATCH = 32


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_backoff_ms: int = 250


@dataclass(frozen=True)
class BackendProfile:
    backend_id: str
    kind: str
    model_name: str
    endpoint_url: str | None = None
    auth_env_var: str = ""
    max_parallel_requests: int = 4
    retry_policy: RetryPolicy = field(default_factory=RetryPolicy)
    request_timeout_ms: int = 60_000

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ConfigurationError(f"unknown backend kind: {self.kind!r}")
        if self.kind != "mock" and not self.endpoint_url:
            raise ConfigurationError(f"profile {self.backend_id}: endpoint required unless kind=mock")
        if self.max_parallel_requests < 1:
            raise ConfigurationError(f"profile {self.backend_id}: max_parallel_requests must be >= 1")


@dataclass(frozen=True)
class DecodeParams:
    temperature: float = 0.0
    beam_size: int = 1
    max_new_tokens: int = 512
    seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ContractError("temperature must be >= 0")
        if self.beam_size < 1 or self.max_new_tokens < 1:
            raise ContractError("beam_size and max_new_tokens must be >= 1")
        if self.beam_size > 1 and self.temperature != 0:
            raise ContractError("beam decoding is deterministic here: beam_size > 1 requires temperature = 0")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    backend_id: str
    latency_ms: float
    attempt_count: int


@dataclass(frozen=True)
class BatchItemError:
    """Per-index failure inside a translate_batch result list."""

    index: int
    message: str


@dataclass(frozen=True)
class RequestRecord:
    """One logged backend call, for audit and tests."""

    op: str
    backend_id: str
    model_name: str
    temperature: float
    beam_size: int
    seed: int | None
    n_segments: int = 1
    direction: tuple[str, str] | None = None


class TransportFailure(Exception):
    """Socket-level failure (timeout / connection reset); retryable."""


# Transport signature: (url, payload, headers, timeout_ms) -> (status, body dict).
Transport = Callable[[str, dict, dict, int], tuple[int, dict]]


def requests_transport(url: str, payload: dict, headers: dict, timeout_ms: int) -> tuple[int, dict]:
    import requests

    try:
        resp = requests.post(url, json=payload, headers=headers, timeout=timeout_ms / 1000.0)
    except (requests.Timeout, requests.ConnectionError) as exc:
        raise TransportFailure(str(exc)) from exc
    try:
        body = resp.json()
    except ValueError:
        body = {}
    return resp.status_code, body


class Gateway:
    """Shared, thread-safe access point for all backend calls."""

    def __init__(self, transport: Transport | None = None, sleeper: Callable[[float], None] = time.sleep):
        self._transport = transport or requests_transport
        self._sleep = sleeper
        self._sems: dict[str, threading.BoundedSemaphore] = {}
        self._sems_lock = threading.Lock()
        self._log_lock = threading.Lock()
        self.request_log: list[RequestRecord] = []

    # -- internals ---------------------------------------------------------

    def _semaphore(self, profile: BackendProfile) -> threading.BoundedSemaphore:
        with self._sems_lock:
            if profile.backend_id not in self._sems:
                self._sems[profile.backend_id] = threading.BoundedSemaphore(profile.max_parallel_requests)
            return self._sems[profile.backend_id]

    def _record(self, rec: RequestRecord) -> None:
        with self._log_lock:
            self.request_log.append(rec)

    def _headers(self, profile: BackendProfile) -> dict:
        headers = {"Content-Type": "application/json"}
        if profile.auth_env_var:
            token = os.environ.get(profile.auth_env_var)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post_with_retry(self, profile: BackendProfile, payload: dict) -> dict:
        policy = profile.retry_policy
        attempt = 0
        while True:
            attempt += 1
            try:
                with self._semaphore(profile):
                    status, body = self._transport(
                        profile.endpoint_url, payload, self._headers(profile), profile.request_timeout_ms
                    )
            except TransportFailure as exc:
                if attempt >= policy.max_attempts:
                    raise TransportError(
                        f"{profile.backend_id}: transport failed after {attempt} attempts: {exc}", attempts=attempt
                    ) from exc
                self._sleep(policy.base_backoff_ms * (2 ** (attempt - 1)) / 1000.0)
                continue
            if status == 422 and body.get("error") == "unsupported_direction":
                raise CapabilityError((payload.get("source_lang", "?"), payload.get("target_lang", "?")))
            if 400 <= status < 500:
                raise ConfigurationError(f"{profile.backend_id}: HTTP {status}: {body.get('error', '')}")
            if status >= 500:
                if attempt >= policy.max_attempts:
                    raise TransportError(
                        f"{profile.backend_id}: HTTP {status} after {attempt} attempts", attempts=attempt
                    )
                self._sleep(policy.base_backoff_ms * (2 ** (attempt - 1)) / 1000.0)
                continue
            body["_attempts"] = attempt
            return body

    # -- operations --------------------------------------------------------

    def complete(self, profile: BackendProfile, prompt: str, params: DecodeParams) -> CompletionResult:
        """One text completion; mock profiles never touch the network."""
        if profile.kind not in ("chat_llm", "mock"):
            raise ContractError(f"complete() requires a chat_llm or mock profile, got {profile.kind}")
        self._record(
            RequestRecord("complete", profile.backend_id, profile.model_name, params.temperature, params.beam_size, params.seed)
        )
        start = time.monotonic()

        if profile.kind == "mock":
            text = mock_backend.mock_complete(profile.model_name, prompt, params.temperature, params.seed)
            attempts = 1
        else:
            payload = {
                "model": profile.model_name,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": params.temperature,
                "max_tokens": params.max_new_tokens,
            }
            if params.seed is not None:
                payload["seed"] = params.seed
            body = self._post_with_retry(profile, payload)
            attempts = body["_attempts"]
            try:
                text = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise ConfigurationError(f"{profile.backend_id}: malformed completion response") from exc

        if not text or not text.strip():
            raise EmptyOutputError(f"{profile.backend_id}: empty completion")
        latency = (time.monotonic() - start) * 1000.0
        return CompletionResult(text=text, backend_id=profile.backend_id, latency_ms=latency, attempt_count=attempts)

    def translate_batch(
        self,
        profile: BackendProfile,
        segments: list[str],
        direction: tuple[LangCode, LangCode],
        params: DecodeParams,
    ) -> list[str | BatchItemError]:
        """Order- and length-preserving batch translation.

        Per-segment failures come back as BatchItemError entries at their
        index instead of aborting the whole batch.
        """
        if profile.kind not in ("seq2seq_mt", "mock"):
            raise ContractError(f"translate_batch() requires a seq2seq_mt or mock profile, got {profile.kind}")
        if not segments:
            raise ContractError("translate_batch() requires a non-empty segment list")
        src, tgt = direction
        self._record(
            RequestRecord(
                "translate_batch",
                profile.backend_id,
                profile.model_name,
                params.temperature,
                params.beam_size,
                params.seed,
                n_segments=len(segments),
                direction=(src.code, tgt.code),
            )
        )

        if profile.kind == "mock":
            return [mock_backend.mock_translate(s, src.code, tgt.code) for s in segments]

        results: list[str | BatchItemError] = [BatchItemError(i, "not attempted") for i in range(len(segments))]
        chunks = [
            (offset, segments[offset : offset + _TRANSLATE_SUBBATCH])
            for offset in range(0, len(segments), _TRANSLATE_SUBBATCH)
        ]

        def run_chunk(offset: int, chunk: list[str]) -> None:
            payload = {
                "model": profile.model_name,
                "source_lang": src.code,
                "target_lang": tgt.code,
                "texts": chunk,
                "beam_size": params.beam_size,
            }
            try:
                body = self._post_with_retry(profile, payload)
            except CapabilityError:
                raise
            except (TransportError, ConfigurationError) as exc:
                for i in range(len(chunk)):
                    results[offset + i] = BatchItemError(offset + i, str(exc))
                return
            translations = body.get("translations")
            if not isinstance(translations, list) or len(translations) != len(chunk):
                for i in range(len(chunk)):
                    results[offset + i] = BatchItemError(offset + i, "malformed translation response")
                return
            for i, item in enumerate(translations):
                if isinstance(item, str):
                    results[offset + i] = item
                else:
                    results[offset + i] = BatchItemError(offset + i, str(item.get("error", "unknown error")))

        # The semaphore inside _post_with_retry enforces the per-profile
        # in-flight bound; the pool just provides the fan-out.
        with ThreadPoolExecutor(max_workers=profile.max_parallel_requests) as pool:
            futures = [pool.submit(run_chunk, offset, chunk) for offset, chunk in chunks]
            for fut in futures:
                fut.result()
        return results


def derived_seed(*parts) -> int:
    """Deterministic 63-bit seed from (master seed, stage name, item index, ...)."""
    return int(stable_hash("seed", *parts)[:15], 16)
