"""Completion backends and the per-line generation loop.

Three backends share one small interface (``Backend.complete``):

* ``OpenAICompatibleBackend`` talks to a ``/completions`` or
  ``/chat/completions`` endpoint over HTTP.
* ``ScriptedMock`` answers from a script, for tests and offline runs.
* ``CachedBackend`` replays recorded responses from a directory of JSON
  records and only forwards misses upstream.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Mapping

import httpx

from .prompting import GenerationParams, Mode, Prompt, apply_assist, build_prompt
from .srcmodel import PreprocessedFile, split_line

logger = logging.getLogger(__name__)

API_KEY_ENV = "FLAG_API_KEY"


class BackendError(Exception):
    """A completion request failed."""


class TransportError(BackendError):
    """Network or server failure; worth another attempt."""


class RateLimitError(TransportError):
    pass


class AuthError(BackendError):
    """Credentials rejected. Never retried."""


class CapabilityError(BackendError):
    """The prompt mode needs a feature the backend lacks."""


class CacheMiss(BackendError):
    pass


class BackendKind(str, enum.Enum):
    HTTP = "http_openai_compatible"
    REPLAY = "replay_cache"
    MOCK = "scripted_mock"


@dataclass(frozen=True)
class BackendDescriptor:
    kind: BackendKind
    model_name: str
    endpoint: str | None = None
    supports_suffix: bool = False
    supports_logprobs: bool = False
    supports_system_prompt: bool = False

    def check_mode(self, mode: Mode) -> None:
        if mode is Mode.INSERTION and not self.supports_suffix:
            raise CapabilityError(f"{self.model_name} does not support insertion (suffix) prompts")
        if mode is Mode.INSTRUCTED_COMPLETE and not self.supports_system_prompt:
            raise CapabilityError(f"{self.model_name} does not support system prompts")


@dataclass
class GeneratedLine:
    text: str
    token_logprobs: list[float] | None = None
    attempts_used: int = 1
    errors_noted: list[str] = field(default_factory=list)
    from_cache: bool = False

    @property
    def mean_logprob(self) -> float | None:
        if not self.token_logprobs:
            return None
        return sum(self.token_logprobs) / len(self.token_logprobs)


def first_line(text: str) -> str:
    return text.split("\n", 1)[0].rstrip("\r")


def cache_key(prompt: Prompt, params: GenerationParams, backend: BackendDescriptor | Backend) -> str:
    """Stable sha256 over everything that can change a response."""
    descriptor = backend.descriptor if isinstance(backend, Backend) else backend
    payload = {
        "mode": prompt.mode.value,
        "system_instruction": prompt.system_instruction,
        "prefix": prompt.prefix,
        "assist": prompt.assist,
        "suffix": prompt.suffix,
        "model_name": descriptor.model_name,
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
        "top_p": params.top_p,
        "stop": params.stop,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Backend:
    descriptor: BackendDescriptor

    def complete(self, prompt: Prompt, params: GenerationParams) -> GeneratedLine:
        """Return the raw completion that follows ``prompt.text``."""
        raise NotImplementedError


def complete_once(prompt: Prompt, params: GenerationParams, backend: Backend) -> GeneratedLine:
    backend.descriptor.check_mode(prompt.mode)
    result = backend.complete(prompt, params)
    result.text = first_line(result.text)
    return result


# ---------------------------------------------------------------------------
# scripted mock


@dataclass(frozen=True)
class Fixed:
    text: str
    logprobs: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Echo:
    """Reply with the original line, so every feature comes out as a match."""
    logprobs: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Sequence:
    """Successive replies for one key; the last one repeats."""
    replies: tuple

    def __init__(self, replies: Iterable):
        replies = tuple(_as_behavior(r) for r in replies)
        if not replies:
            raise ValueError("a sequence needs at least one reply")
        object.__setattr__(self, "replies", replies)


@dataclass(frozen=True)
class Fail:
    """Raise ``times`` transport errors, then behave like ``then``."""
    times: int
    then: object = field(default_factory=Echo)
    auth: bool = False


def empty_then(n: int, text: str) -> Sequence:
    return Sequence([""] * n + [text])


def _as_behavior(value):
    if isinstance(value, (Fixed, Echo, Sequence, Fail)):
        return value
    if isinstance(value, str):
        return Fixed(value)
    if isinstance(value, (list, tuple)):
        return Sequence(_as_behavior(v) for v in value)
    if isinstance(value, Mapping):
        return behavior_from_json(value)
    raise TypeError(f"cannot interpret mock behavior {value!r}")


def behavior_from_json(obj) -> object:
    """Decode one script entry from JSON.

    Strings are fixed replies, lists are sequences, and objects carry a
    ``type`` of ``fixed``, ``echo``, ``empty_then`` or ``fail``.
    """
    if not isinstance(obj, Mapping):
        return _as_behavior(obj)
    kind = obj.get("type", "fixed")
    logprobs = tuple(obj["logprobs"]) if obj.get("logprobs") is not None else None
    if kind == "fixed":
        return Fixed(obj["text"], logprobs)
    if kind == "echo":
        return Echo(logprobs)
    if kind == "empty_then":
        return Sequence([Fixed("")] * int(obj["n"]) + [Fixed(obj["text"], logprobs)])
    if kind == "fail":
        return Fail(int(obj["times"]), _as_behavior(obj.get("then", {"type": "echo"})), bool(obj.get("auth")))
    raise ValueError(f"unknown mock behavior type {kind!r}")


class ScriptedMock(Backend):
    """Deterministic backend driven by a script.

    Script keys are matched in order: the request's cache key digest,
    ``"<file name>:<line no>"``, then the bare line number (int or str).
    Unmatched requests use ``default``.
    """

    def __init__(self, script: Mapping | None = None, default=None, model_name: str = "scripted-mock",
                 supports_suffix: bool = True, supports_logprobs: bool = True,
                 supports_system_prompt: bool = True):
        self.script = {k: _as_behavior(v) for k, v in (script or {}).items()}
        self.default = _as_behavior(default) if default is not None else Echo()
        self.descriptor = BackendDescriptor(
            BackendKind.MOCK, model_name,
            supports_suffix=supports_suffix,
            supports_logprobs=supports_logprobs,
            supports_system_prompt=supports_system_prompt,
        )
        self.calls = 0
        self._counters: dict[object, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_json(cls, path: str | os.PathLike, **kwargs) -> ScriptedMock:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if "script" in data or "default" in data:
            script, default = data.get("script", {}), data.get("default")
        else:
            script, default = data, None
        script = {k: behavior_from_json(v) for k, v in script.items()}
        return cls(script, default=behavior_from_json(default) if default is not None else None, **kwargs)

    def _lookup(self, prompt: Prompt, params: GenerationParams):
        candidates = [cache_key(prompt, params, self.descriptor)]
        if prompt.line_no:
            candidates += [f"{os.path.basename(prompt.path)}:{prompt.line_no}", prompt.line_no, str(prompt.line_no)]
        for key in candidates:
            if key in self.script:
                return key, self.script[key]
        return None, self.default

    def complete(self, prompt: Prompt, params: GenerationParams) -> GeneratedLine:
        key, behavior = self._lookup(prompt, params)
        with self._lock:
            self.calls += 1
            n = self._counters.get(key, 0)
            self._counters[key] = n + 1
        return self._resolve(behavior, prompt, n)

    def _resolve(self, behavior, prompt: Prompt, n: int) -> GeneratedLine:
        if isinstance(behavior, Sequence):
            behavior = behavior.replies[min(n, len(behavior.replies) - 1)]
            return self._resolve(behavior, prompt, 0)
        if isinstance(behavior, Fail):
            if n < behavior.times:
                if behavior.auth:
                    raise AuthError("scripted auth failure")
                raise TransportError(f"scripted transport failure {n + 1}/{behavior.times}")
            return self._resolve(behavior.then, prompt, n - behavior.times)
        if isinstance(behavior, Echo):
            original = prompt.original
            text = original[len(prompt.assist):] if original.startswith(prompt.assist) else original
            return GeneratedLine(text, list(behavior.logprobs) if behavior.logprobs else None)
        if isinstance(behavior, Fixed):
            return GeneratedLine(behavior.text, list(behavior.logprobs) if behavior.logprobs else None)
        raise TypeError(behavior)


# ---------------------------------------------------------------------------
# HTTP


class OpenAICompatibleBackend(Backend):
    """Client for OpenAI-style ``completions`` and ``chat/completions``.

    ``api="completions"`` sends prefix and optional suffix and can return
    token logprobs. ``api="chat"`` sends the prompt as a user message, with
    the system instruction first in instructed mode.
    """

    def __init__(self, endpoint: str, model_name: str, api: str = "completions",
                 api_key: str | None = None, logprobs: bool | None = None,
                 timeout: float = 60.0, max_backoff_seconds: float = 60.0,
                 client: httpx.Client | None = None, sleep: Callable[[float], None] = time.sleep):
        if api not in ("completions", "chat"):
            raise ValueError(f"api must be 'completions' or 'chat', got {api!r}")
        self.api = api
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if logprobs is None:
            logprobs = api == "completions"
        self.descriptor = BackendDescriptor(
            BackendKind.HTTP, model_name, endpoint=self.endpoint,
            supports_suffix=api == "completions",
            supports_logprobs=logprobs,
            supports_system_prompt=api == "chat",
        )
        self.max_backoff_seconds = max_backoff_seconds
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def request_body(self, prompt: Prompt, params: GenerationParams) -> tuple[str, dict]:
        common = {
            "model": self.descriptor.model_name,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "top_p": params.top_p,
            "stop": params.stop,
            "n": 1,
        }
        if self.api == "completions":
            body = dict(common, prompt=prompt.text)
            if prompt.suffix is not None:
                body["suffix"] = "\n" + prompt.suffix if prompt.suffix else ""
            if self.descriptor.supports_logprobs:
                body["logprobs"] = 1
            return f"{self.endpoint}/completions", body
        messages = []
        if prompt.system_instruction:
            messages.append({"role": "system", "content": prompt.system_instruction})
        messages.append({"role": "user", "content": prompt.text})
        body = dict(common, messages=messages)
        if self.descriptor.supports_logprobs:
            body["logprobs"] = True
        return f"{self.endpoint}/chat/completions", body

    def complete(self, prompt: Prompt, params: GenerationParams) -> GeneratedLine:
        url, body = self.request_body(prompt, params)
        waited = 0.0
        attempt = 0
        while True:
            try:
                resp = self._client.post(url, json=body, headers=self._headers())
            except httpx.HTTPError as exc:
                raise TransportError(f"{type(exc).__name__}: {exc}") from exc
            if resp.status_code in (401, 403):
                raise AuthError(f"HTTP {resp.status_code} from {url}")
            if resp.status_code == 429:
                delay = min(2.0 ** attempt, 30.0) * (0.5 + random.random() / 2)
                if waited + delay > self.max_backoff_seconds:
                    raise RateLimitError(f"rate limited for {waited:.1f}s at {url}")
                logger.warning("rate limited, backing off %.2fs", delay)
                self._sleep(delay)
                waited += delay
                attempt += 1
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
            try:
                return self.parse_response(resp.json())
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed response from {url}: {exc}") from exc

    def parse_response(self, data: dict) -> GeneratedLine:
        choice = data["choices"][0]
        if self.api == "completions":
            text = choice["text"]
            lp = choice.get("logprobs") or {}
            tokens, values = lp.get("tokens"), lp.get("token_logprobs")
        else:
            text = choice["message"]["content"] or ""
            content = (choice.get("logprobs") or {}).get("content") or []
            tokens = [c["token"] for c in content] or None
            values = [c["logprob"] for c in content] or None
        return GeneratedLine(text, _generated_logprobs(tokens, values))


def _generated_logprobs(tokens, values) -> list[float] | None:
    """Logprobs of the tokens on the first line, stop token excluded."""
    if not values:
        return None
    if not tokens:
        return [float(v) for v in values if v is not None]
    kept = []
    for tok, val in zip(tokens, values):
        if "\n" in tok or val is None:
            break
        kept.append(float(val))
    return kept or None


# ---------------------------------------------------------------------------
# replay cache


class CacheStore:
    """Directory of JSON records, one file per key, never overwritten."""

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None

    def put(self, key: str, request: dict, response_text: str, token_logprobs: list[float] | None) -> None:
        record = {
            "key": key,
            "request": request,
            "response_text": response_text,
            "token_logprobs": token_logprobs,
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        path = self._path(key)
        with self._lock:
            if path.exists():
                return
            tmp = path.with_suffix(f".tmp{threading.get_ident()}")
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(record, fh, indent=2, sort_keys=True)
            os.replace(tmp, path)

    def __len__(self):
        return sum(1 for _ in self.directory.glob("*.json"))


class CachedBackend(Backend):
    """Replay recorded responses; forward misses to ``upstream`` if any."""

    def __init__(self, store: CacheStore | str | os.PathLike, upstream: Backend | None = None,
                 descriptor: BackendDescriptor | None = None):
        self.store = store if isinstance(store, CacheStore) else CacheStore(store)
        self.upstream = upstream
        base = upstream.descriptor if upstream is not None else descriptor
        if base is None:
            raise ValueError("a cache without an upstream backend needs a descriptor")
        self.descriptor = BackendDescriptor(
            BackendKind.REPLAY, base.model_name, base.endpoint,
            base.supports_suffix, base.supports_logprobs, base.supports_system_prompt,
        )
        self.upstream_calls = 0
        self._lock = threading.Lock()

    def complete(self, prompt: Prompt, params: GenerationParams) -> GeneratedLine:
        key = cache_key(prompt, params, self.descriptor)
        record = self.store.get(key)
        if record is not None:
            return GeneratedLine(record["response_text"], record.get("token_logprobs"), from_cache=True)
        if self.upstream is None:
            raise CacheMiss(f"no cached response for key {key[:12]}")
        with self._lock:
            self.upstream_calls += 1
        result = self.upstream.complete(prompt, params)
        request = {
            "mode": prompt.mode.value,
            "system_instruction": prompt.system_instruction,
            "prefix": prompt.prefix,
            "assist": prompt.assist,
            "suffix": prompt.suffix,
            "model_name": self.descriptor.model_name,
            "params": asdict(params),
        }
        self.store.put(key, request, result.text, result.token_logprobs)
        return result


# ---------------------------------------------------------------------------
# generation loop


def _is_comment(text: str, file: PreprocessedFile) -> bool:
    code, comment, _ = split_line(text, file.profile)
    return not code and bool(comment)


def generate_line(file: PreprocessedFile, loc: int, mode: Mode | str, params: GenerationParams,
                  backend: Backend) -> GeneratedLine:
    """Generate a replacement for line ``loc`` with bounded retries.

    The first attempt uses the plain prompt; later attempts seed it with the
    first ``params.assist_chars`` characters of the original line, and the
    returned text then includes that seed. A retry is spent when the reply
    is empty, when a code line gets a comment back, or when the request
    fails with a retryable error. Both reply rules stop retrying after
    ``params.max_attempts`` failures, so at most ``max_attempts + 1``
    requests are made.
    """
    mode = Mode.parse(mode)
    backend.descriptor.check_mode(mode)
    original = file.lines[loc]
    base = build_prompt(file, loc, mode, params)
    assisted = apply_assist(base, original, params)

    failures = 0
    calls = 0
    notes: list[str] = []
    last: GeneratedLine | None = None
    while True:
        prompt = base if failures == 0 else assisted
        calls += 1
        try:
            reply = complete_once(prompt, params, backend)
        except (AuthError, CapabilityError):
            raise
        except BackendError as exc:
            notes.append(f"error: {exc}")
            if failures >= params.max_attempts:
                if last is None:
                    raise BackendError(f"{file.path}:{original.original_line_no}: "
                                       f"no response after {calls} requests ({exc})") from exc
                break
            failures += 1
            continue

        completion = reply.text
        reply.text = (prompt.assist + completion).rstrip()
        last = reply
        can_retry = failures < params.max_attempts
        if completion == "":
            if can_retry:
                notes.append("empty")
                failures += 1
                continue
            notes.append("empty-exhausted")
        elif original.code_part and _is_comment(reply.text, file):
            if can_retry:
                notes.append("comment-for-code")
                failures += 1
                continue
            notes.append("comment-for-code")
        break

    last.attempts_used = calls
    last.errors_noted = notes
    return last


def generate_file(file: PreprocessedFile, mode: Mode | str, params: GenerationParams, backend: Backend,
                  parallelism: int = 1) -> list[GeneratedLine]:
    """Generate every checkable line. Results are ordered by line index."""
    indices = list(file.checkable_indices())
    if parallelism <= 1:
        return [generate_line(file, i, mode, params, backend) for i in indices]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(lambda i: generate_line(file, i, mode, params, backend), indices))
