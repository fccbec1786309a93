"""Provider-agnostic client for chat-completion and vision endpoints.

One gateway instance serves a whole run: it owns the response cache, the token
meter, and the call log. Backends speak the de-facto chat-completions JSON
shape (system/user messages, image parts as base64 data URIs), which keeps
hosted providers and the scripted mock interchangeable.

Thread safety: `complete` / `complete_structured` may be called from parallel
workers; the meter, call log, and cache writes are individually atomic.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import re
import threading
import time
import urllib.parse
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import requests
from jsonschema import Draft202012Validator

from .errors import ConfigError, StageError
from .schemas import resolve_schema
from .workspace import atomic_write_json, read_json

log = logging.getLogger(__name__)

PIPELINE_STAGES = ("blueprint", "parsing", "decomposition", "implement", "validate", "debug", "judge")


@dataclass(frozen=True)
class ModelProfile:
    """One configured model endpoint; temperature defaults to 0 for reproducibility."""

    name: str
    endpoint: str = "http://localhost:8080/v1/chat/completions"
    api_key_ref: str = "MODEL_API_KEY"
    supports_vision: bool = False
    temperature: float = 0.0
    max_output_tokens: int = 4096

    def __post_init__(self) -> None:
        parsed = urllib.parse.urlparse(self.endpoint)
        if not parsed.scheme or not parsed.netloc:
            raise ConfigError(f"profile {self.name!r}: endpoint is not a valid URL: {self.endpoint!r}")
        if not self.api_key_ref:
            raise ConfigError(f"profile {self.name!r}: api_key_ref must be non-empty")
        if not 0.0 <= self.temperature <= 1.0:
            raise ConfigError(f"profile {self.name!r}: temperature must be in [0, 1]")
        if self.max_output_tokens <= 0:
            raise ConfigError(f"profile {self.name!r}: max_output_tokens must be positive")


@dataclass(frozen=True)
class StageBinding:
    stage: str
    profile: ModelProfile

    def __post_init__(self) -> None:
        if self.stage not in PIPELINE_STAGES:
            raise ConfigError(f"unknown pipeline stage: {self.stage!r}")


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    media_type: str
    data: bytes


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_parts: tuple[TextPart | ImagePart, ...]
    response_schema: str | None = None

    def __post_init__(self) -> None:
        if not self.user_parts:
            raise ConfigError("ChatRequest needs at least one user part")

    @property
    def has_images(self) -> bool:
        return any(isinstance(p, ImagePart) for p in self.user_parts)

    def text_content(self) -> str:
        """All textual content, used by the mock backend for substring matching."""
        chunks = [self.system_prompt]
        chunks.extend(p.text for p in self.user_parts if isinstance(p, TextPart))
        return "\n".join(chunks)

    def with_extra_text(self, text: str) -> "ChatRequest":
        return ChatRequest(self.system_prompt, self.user_parts + (TextPart(text),), self.response_schema)

    def cache_key(self, profile_name: str) -> str:
        hasher = hashlib.sha256()
        parts_digest: list[Any] = []
        for part in self.user_parts:
            if isinstance(part, TextPart):
                parts_digest.append({"text": part.text})
            else:
                parts_digest.append(
                    {"image": hashlib.sha256(part.data).hexdigest(), "media_type": part.media_type}
                )
        payload = {
            "profile": profile_name,
            "system": self.system_prompt,
            "parts": parts_digest,
            "schema": self.response_schema,
        }
        hasher.update(json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8"))
        return hasher.hexdigest()


@dataclass(frozen=True)
class TokenUsage:
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(self.input_tokens + other.input_tokens, self.output_tokens + other.output_tokens)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: TokenUsage
    cache_hit: bool


@dataclass(frozen=True)
class StructuredResult:
    value: Any
    usage: TokenUsage
    repairs_used: int


class TransportError(Exception):
    """Internal: one failed backend round trip."""

    def __init__(self, message: str, *, status: int | None = None, transient: bool = False):
        super().__init__(message)
        self.status = status
        self.transient = transient


class TokenMeter:
    """Thread-safe accumulator; totals cover non-cache-hit calls only."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._by_stage: dict[str, TokenUsage] = {}

    def add(self, stage: str, usage: TokenUsage) -> None:
        with self._lock:
            self._by_stage[stage] = self._by_stage.get(stage, TokenUsage()) + usage

    def stage_total(self, stage: str) -> TokenUsage:
        with self._lock:
            return self._by_stage.get(stage, TokenUsage())

    def total(self) -> TokenUsage:
        with self._lock:
            out = TokenUsage()
            for usage in self._by_stage.values():
                out = out + usage
            return out


class HttpBackend:
    """POSTs the chat-completions wire shape to the profile's endpoint."""

    def __init__(self, session: requests.Session | None = None, timeout: float = 120.0):
        self._session = session or requests.Session()
        self._timeout = timeout

    def send(self, profile: ModelProfile, payload: dict[str, Any]) -> tuple[str, TokenUsage]:
        api_key = os.environ.get(profile.api_key_ref)
        if not api_key:
            raise ConfigError(
                f"credential missing: environment variable {profile.api_key_ref!r} "
                f"(profile {profile.name!r}) is not set"
            )
        headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}
        wire = {k: v for k, v in payload.items() if not k.startswith("_")}
        try:
            resp = self._session.post(profile.endpoint, json=wire, headers=headers, timeout=self._timeout)
        except requests.RequestException as exc:
            raise TransportError(f"transport failure: {exc}", transient=True) from exc
        if resp.status_code >= 500:
            raise TransportError(f"server error HTTP {resp.status_code}", status=resp.status_code, transient=True)
        if resp.status_code >= 400:
            raise TransportError(f"client error HTTP {resp.status_code}: {resp.text[:500]}", status=resp.status_code)
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
            usage = body.get("usage", {})
            tokens = TokenUsage(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed completion payload: {exc}", status=resp.status_code) from exc
        return text if isinstance(text, str) else json.dumps(text), tokens


class MockScriptError(ConfigError):
    """The mock playbook had no rule (and no default) for a request."""


class MockBackend:
    """Deterministic scripted backend driven by a JSON playbook.

    Playbook shape::

        {
          "default": {"text": "...", "input_tokens": 1, "output_tokens": 1},
          "rules": [
            {"stage": "implement",            # optional: exact stage tag
             "schema": "corrections.v1",      # optional: exact response schema id
             "contains": "train.py",           # optional: substring of prompt text
             "responses": [                    # consumed in order; last repeats
               {"text": "...", "input_tokens": 10, "output_tokens": 5}
             ]}
          ]
        }

    The first matching rule answers. Requests are recorded (wire payloads
    included) so tests can assert what was sent.
    """

    def __init__(self, playbook: dict[str, Any]):
        self._rules = [dict(rule) for rule in playbook.get("rules", [])]
        for rule in self._rules:
            if not rule.get("responses"):
                raise ConfigError("mock rule without responses")
            rule["_next"] = 0
        self._default = playbook.get("default")
        self._lock = threading.Lock()
        self.sent_payloads: list[dict[str, Any]] = []

    @classmethod
    def from_file(cls, path: Path) -> "MockBackend":
        try:
            return cls(read_json(path))
        except FileNotFoundError:
            raise ConfigError(f"mock playbook not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"mock playbook is not valid JSON: {path}: {exc}") from None

    def send(self, profile: ModelProfile, payload: dict[str, Any]) -> tuple[str, TokenUsage]:
        stage = payload.get("_stage", "")
        schema = payload.get("_schema")
        text = payload.get("_text", "")
        with self._lock:
            self.sent_payloads.append(payload)
            for rule in self._rules:
                if "stage" in rule and rule["stage"] != stage:
                    continue
                if "schema" in rule and rule["schema"] != schema:
                    continue
                if "contains" in rule and rule["contains"] not in text:
                    continue
                responses = rule["responses"]
                idx = min(rule["_next"], len(responses) - 1)
                rule["_next"] += 1
                chosen = responses[idx]
                return str(chosen["text"]), TokenUsage(
                    int(chosen.get("input_tokens", 0)), int(chosen.get("output_tokens", 0))
                )
            if self._default is not None:
                return str(self._default["text"]), TokenUsage(
                    int(self._default.get("input_tokens", 0)),
                    int(self._default.get("output_tokens", 0)),
                )
        raise MockScriptError(f"no mock rule matched stage={stage!r} schema={schema!r}")


def make_backend(descriptor: str):
    """`http` -> live HTTP backend; `mock:<playbook.json>` -> scripted backend."""
    if descriptor == "http":
        return HttpBackend()
    if descriptor.startswith("mock:"):
        return MockBackend.from_file(Path(descriptor[len("mock:"):]))
    raise ConfigError(f"unknown backend descriptor: {descriptor!r}")


_SCHEMA_INSTRUCTION = (
    "Respond with a single JSON object conforming to this JSON Schema. "
    "Output only the JSON object, no prose, no code fences.\n"
)


class LlmGateway:
    """Caching, retrying, token-metered front door for every model call."""

    def __init__(
        self,
        backend,
        cache_dir: Path,
        call_log_path: Path | None = None,
        *,
        retries: int = 3,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if retries < 1:
            raise ConfigError("retries must be >= 1")
        self.backend = backend
        self.cache_dir = Path(cache_dir)
        self.call_log_path = call_log_path
        self.meter = TokenMeter()
        self._retries = retries
        self._backoff = backoff
        self._sleep = sleep
        self._log_lock = threading.Lock()
        self._seq = 0

    # -- core ---------------------------------------------------------------

    def complete(self, request: ChatRequest, binding: StageBinding) -> ChatResponse:
        if request.has_images and not binding.profile.supports_vision:
            raise ConfigError(
                f"request carries image parts but profile {binding.profile.name!r} "
                "does not support vision"
            )
        key = request.cache_key(binding.profile.name)
        cached = self._cache_read(key)
        if cached is not None:
            response = ChatResponse(cached["text"], TokenUsage(), cache_hit=True)
            self._log_call(binding, request, response, key)
            return response

        payload = self._wire_payload(request, binding)
        text, usage = self._send_with_retries(binding, payload)
        self._cache_write(key, text, usage, binding.profile.name)
        response = ChatResponse(text, usage, cache_hit=False)
        self.meter.add(binding.stage, usage)
        self._log_call(binding, request, response, key)
        return response

    def complete_structured(
        self, request: ChatRequest, binding: StageBinding, max_repairs: int = 2
    ) -> StructuredResult:
        """Parse the reply as JSON against the request's schema, re-prompting on failure.

        The schema is embedded in the prompt; a malformed reply is sent back with
        the validation error appended, up to `max_repairs` extra rounds.
        """
        if not request.response_schema:
            raise ConfigError("complete_structured requires a response_schema")
        if max_repairs < 0:
            raise ConfigError("max_repairs must be >= 0")
        schema = resolve_schema(request.response_schema)
        validator = Draft202012Validator(schema)

        attempt_request = request.with_extra_text(_SCHEMA_INSTRUCTION + json.dumps(schema, sort_keys=True))
        usage = TokenUsage()
        last_text = ""
        for repairs_used in range(max_repairs + 1):
            response = self.complete(attempt_request, binding)
            usage = usage + response.usage
            last_text = response.text
            value = _extract_json(response.text)
            if value is not None:
                problems = sorted(validator.iter_errors(value), key=str)
                if not problems:
                    return StructuredResult(value, usage, repairs_used)
                error_text = "; ".join(p.message for p in problems[:5])
            else:
                error_text = "reply was not parseable JSON"
            attempt_request = attempt_request.with_extra_text(
                "Your previous reply was rejected.\n"
                f"Previous reply:\n{response.text}\n"
                f"Validation error: {error_text}\n"
                "Return only the corrected JSON object."
            )
        raise StageError(
            binding.stage,
            f"structured output still violates schema {request.response_schema!r} "
            f"after {max_repairs} repair(s)",
            detail=last_text,
        )

    def complete_validated(
        self,
        request: ChatRequest,
        binding: StageBinding,
        validate: Callable[[Any], list[str]],
        max_repairs: int = 2,
    ) -> StructuredResult:
        """Structured completion plus a semantic validator with its own repair loop."""
        usage = TokenUsage()
        attempt_request = request
        problems: list[str] = []
        for repairs_used in range(max_repairs + 1):
            result = self.complete_structured(attempt_request, binding, max_repairs)
            usage = usage + result.usage
            problems = validate(result.value)
            if not problems:
                return StructuredResult(result.value, usage, repairs_used)
            attempt_request = attempt_request.with_extra_text(
                "Your previous answer was structurally valid JSON but violated these "
                "requirements:\n- " + "\n- ".join(problems) + "\nReturn a corrected JSON object."
            )
        raise StageError(binding.stage, "semantic validation failed: " + "; ".join(problems))

    # -- wire ----------------------------------------------------------------

    def _wire_payload(self, request: ChatRequest, binding: StageBinding) -> dict[str, Any]:
        content: list[dict[str, Any]] = []
        for part in request.user_parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            else:
                uri = f"data:{part.media_type};base64,{base64.b64encode(part.data).decode('ascii')}"
                content.append({"type": "image_url", "image_url": {"url": uri}})
        return {
            "model": binding.profile.name,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": content},
            ],
            "temperature": binding.profile.temperature,
            "max_tokens": binding.profile.max_output_tokens,
            # underscore keys are metadata for the mock backend; hosted endpoints ignore them
            "_stage": binding.stage,
            "_schema": request.response_schema,
            "_text": request.text_content(),
        }

    def _send_with_retries(self, binding: StageBinding, payload: dict[str, Any]) -> tuple[str, TokenUsage]:
        delay = self._backoff
        last: TransportError | None = None
        for attempt in range(self._retries):
            try:
                return self.backend.send(binding.profile, payload)
            except TransportError as exc:
                last = exc
                if not exc.transient:
                    break
                if attempt < self._retries - 1:
                    self._sleep(delay)
                    delay *= 2
        assert last is not None
        status = f" (HTTP {last.status})" if last.status is not None else ""
        raise StageError(binding.stage, f"backend failed after {self._retries} attempt(s){status}: {last}")

    # -- cache & log -----------------------------------------------------------

    def _cache_read(self, key: str) -> dict[str, Any] | None:
        path = self.cache_dir / f"{key}.json"
        if not path.exists():
            return None
        return read_json(path)

    def _cache_write(self, key: str, text: str, usage: TokenUsage, profile: str) -> None:
        atomic_write_json(
            self.cache_dir / f"{key}.json",
            {
                "text": text,
                "input_tokens": usage.input_tokens,
                "output_tokens": usage.output_tokens,
                "profile": profile,
            },
        )

    def _log_call(self, binding: StageBinding, request: ChatRequest, response: ChatResponse, key: str) -> None:
        if self.call_log_path is None:
            return
        with self._log_lock:
            self._seq += 1
            record = {
                "seq": self._seq,
                "stage": binding.stage,
                "profile": binding.profile.name,
                "schema": request.response_schema,
                "cache_hit": response.cache_hit,
                "input_tokens": response.usage.input_tokens,
                "output_tokens": response.usage.output_tokens,
                "cache_key": key,
            }
            self.call_log_path.parent.mkdir(parents=True, exist_ok=True)
            with self.call_log_path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(record, sort_keys=True) + "\n")


def read_call_log(path: Path) -> list[dict[str, Any]]:
    if not path.exists():
        return []
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def _extract_json(text: str) -> Any | None:
    """Best-effort JSON extraction: direct parse, fenced block, or first {...} span."""
    text = text.strip()
    if not text:
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    fence = _FENCE_RE.search(text)
    if fence:
        try:
            return json.loads(fence.group(1).strip())
        except json.JSONDecodeError:
            pass
    start, end = text.find("{"), text.rfind("}")
    if start != -1 and end > start:
        try:
            return json.loads(text[start : end + 1])
        except json.JSONDecodeError:
            return None
    return None
