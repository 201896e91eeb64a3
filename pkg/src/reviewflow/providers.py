"""Chat-completion providers with client-side structured output enforcement.

Two backends exist: ``openai_compatible`` speaks the chat-completions wire format
(OpenAI itself, Gemini's compatibility endpoint, Ollama, vLLM, LiteLLM proxies
and so on, selected by ``base_url``) and ``mock`` answers from a deterministic
script. Both sit behind :class:`Provider`, which parses and validates every
response against an :class:`OutputSchema` and retries with the validation
error appended to the prompt.
"""

from __future__ import annotations

import asyncio
import base64
import json
import logging
import math
import mimetypes
import os
import random
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Protocol

import httpx

from .errors import (
    AuthMissingError,
    ReviewFlowError,
    SchemaViolationError,
    TransportError,
    UnsupportedFeatureError,
)
from .model import ReviewOutput

logger = logging.getLogger(__name__)

PROVIDER_KINDS = ("openai_compatible", "mock")
DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_MAX_RETRIES = 3
DEFAULT_TIMEOUT = 60.0
DEFAULT_BACKOFF = 0.5

SYSTEM_MESSAGE = (
    "You are a careful reviewer assisting with academic literature reviews. "
    "Answer with a single JSON object and nothing else."
)


# --- output schemas -----------------------------------------------------------


@dataclass(frozen=True)
class FieldKind:
    """Primitive kind of one output field.

    ``kind`` is one of ``text``, ``integer``, ``integer_in_set``,
    ``integer_in_range`` or ``list_of_text``.
    """

    kind: str
    allowed: tuple[int, ...] = ()
    low: int | None = None
    high: int | None = None
    nonempty: bool = False

    @classmethod
    def text(cls, nonempty: bool = False) -> FieldKind:
        return cls("text", nonempty=nonempty)

    @classmethod
    def integer(cls) -> FieldKind:
        return cls("integer")

    @classmethod
    def integer_in_set(cls, values: Sequence[int]) -> FieldKind:
        values = tuple(sorted(set(values)))
        if not values:
            raise ReviewFlowError("integer_in_set needs at least one value")
        return cls("integer_in_set", allowed=values)

    @classmethod
    def integer_in_range(cls, low: int, high: int) -> FieldKind:
        if low > high:
            raise ReviewFlowError(f"empty range [{low}, {high}]")
        return cls("integer_in_range", low=low, high=high)

    @classmethod
    def list_of_text(cls) -> FieldKind:
        return cls("list_of_text")

    def check(self, value: Any) -> str | None:
        """Return a description of why ``value`` does not conform, or None."""
        if self.kind == "text":
            if not isinstance(value, str):
                return f"expected a string, got {_json_type(value)}"
            if self.nonempty and not value.strip():
                return "must be a nonempty string"
            return None
        if self.kind == "list_of_text":
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                return f"expected a list of strings, got {_json_type(value)}"
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            return f"expected an integer, got {_json_type(value)}"
        if self.kind == "integer_in_set" and value not in self.allowed:
            return f"{value} is not one of {list(self.allowed)}"
        if self.kind == "integer_in_range" and not (self.low <= value <= self.high):
            return f"{value} is outside [{self.low}, {self.high}]"
        return None

    def describe(self) -> str:
        if self.kind == "text":
            return "non-empty string" if self.nonempty else "string"
        if self.kind == "list_of_text":
            return "list of strings"
        if self.kind == "integer_in_set":
            return f"integer, one of {list(self.allowed)}"
        if self.kind == "integer_in_range":
            return f"integer from {self.low} to {self.high}"
        return "integer"

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.allowed:
            out["values"] = list(self.allowed)
        if self.low is not None:
            out["min"], out["max"] = self.low, self.high
        if self.nonempty:
            out["nonempty"] = True
        return out

    @classmethod
    def from_spec(cls, spec: str | Mapping[str, Any]) -> FieldKind:
        """Build from a config value: ``"text"`` or ``{kind = ..., values = [...]}``."""
        if isinstance(spec, str):
            spec = {"kind": spec}
        kind = spec.get("kind")
        if kind == "text":
            return cls.text(bool(spec.get("nonempty", False)))
        if kind == "integer":
            return cls.integer()
        if kind == "integer_in_set":
            return cls.integer_in_set(spec.get("values") or [])
        if kind == "integer_in_range":
            return cls.integer_in_range(int(spec["min"]), int(spec["max"]))
        if kind == "list_of_text":
            return cls.list_of_text()
        raise ReviewFlowError(f"unknown field kind {kind!r}")


def _json_type(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, (int, float)):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, list):
        return "array"
    return "object"


@dataclass(frozen=True)
class OutputSchema:
    fields: dict[str, FieldKind]

    def __post_init__(self) -> None:
        if not self.fields:
            raise ReviewFlowError("an output schema needs at least one field")

    @property
    def names(self) -> list[str]:
        return list(self.fields)

    def problems(self, payload: Any) -> list[str]:
        if not isinstance(payload, dict):
            return [f"expected a JSON object, got {_json_type(payload)}"]
        issues = []
        for name, kind in self.fields.items():
            if name not in payload:
                issues.append(f"missing field {name!r}")
                continue
            why = kind.check(payload[name])
            if why:
                issues.append(f"field {name!r}: {why}")
        for name in payload:
            if name not in self.fields:
                issues.append(f"unexpected field {name!r}")
        return issues

    def validate(self, payload: Any) -> ReviewOutput:
        issues = self.problems(payload)
        if issues:
            raise SchemaViolationError("; ".join(issues))
        return ReviewOutput({name: payload[name] for name in self.fields})

    def describe(self) -> str:
        return "\n".join(f'- "{name}": {kind.describe()}' for name, kind in self.fields.items())

    def to_dict(self) -> dict:
        return {name: kind.to_dict() for name, kind in self.fields.items()}


_FENCE_OPEN = re.compile(r"^```[A-Za-z0-9_-]*[ \t]*\r?\n")
_FENCE_CLOSE = re.compile(r"\r?\n?```$")


def strip_fence(text: str) -> str:
    """Remove one surrounding Markdown code fence, if there is one."""
    stripped = text.strip()
    m = _FENCE_OPEN.match(stripped)
    if m and _FENCE_CLOSE.search(stripped[m.end() :]):
        body = stripped[m.end() :]
        return _FENCE_CLOSE.sub("", body, count=1).strip()
    return stripped


def parse_response(raw: str, schema: OutputSchema) -> ReviewOutput:
    """Parse raw model text into a validated output.

    Raises:
        SchemaViolationError: not JSON, not an object, or not matching ``schema``.
    """
    try:
        payload = json.loads(strip_fence(raw))
    except json.JSONDecodeError as exc:
        raise SchemaViolationError(f"response is not valid JSON ({exc.msg})", raw=raw) from None
    try:
        return schema.validate(payload)
    except SchemaViolationError as exc:
        exc.raw = raw
        raise


# --- configuration, usage and cost --------------------------------------------


@dataclass(frozen=True)
class Price:
    input_cost_per_token: Decimal
    output_cost_per_token: Decimal

    def __post_init__(self) -> None:
        if self.input_cost_per_token < 0 or self.output_cost_per_token < 0:
            raise ReviewFlowError("token prices must be nonnegative")

    @classmethod
    def of(cls, input_cost: object, output_cost: object) -> Price:
        """Build from numbers or strings; floats go through ``str`` to avoid binary noise."""
        return cls(_to_decimal(input_cost), _to_decimal(output_cost))


def _to_decimal(value: object) -> Decimal:
    if isinstance(value, Decimal):
        return value
    if isinstance(value, bool):
        raise ReviewFlowError(f"not a price: {value!r}")
    return Decimal(str(value))


@dataclass(frozen=True)
class Usage:
    input_tokens: int = 0
    output_tokens: int = 0
    retries_used: int = 0


def estimate_cost(usage: Usage, price: Price) -> Decimal:
    return (
        usage.input_tokens * price.input_cost_per_token
        + usage.output_tokens * price.output_cost_per_token
    )


@dataclass(frozen=True)
class MockFailure:
    """Injected failure for the first ``times`` attempts (``None`` means every attempt)."""

    times: int | None = 1
    response: str = "not json"
    transport: bool = False

    def active(self, attempt: int) -> bool:
        return self.times is None or attempt < self.times


@dataclass(frozen=True)
class MockScript:
    """Deterministic responses keyed by ``(agent name, row index)``.

    Lookup order: exact key, then the agent's ``"*"`` entry, then ``default``,
    then a synthesized schema-conforming answer when ``synthesize`` is set.
    """

    responses: dict[tuple[str, str], str] = field(default_factory=dict)
    default: str | None = None
    failures: dict[tuple[str, str], MockFailure] = field(default_factory=dict)
    synthesize: bool = False
    seed: int = 0

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], seed: int = 0) -> MockScript:
        """Load the JSON script format::

            {"default": {...} | "raw text",
             "synthesize": false,
             "responses": {"Alice": {"0": {...}, "*": "raw"}},
             "failures": {"Alice": {"1": {"times": 1, "response": "not json"}}}}

        A failure with ``"always": true`` never recovers.

        Object-valued responses are serialized to canonical JSON.
        """

        def text(value: Any) -> str:
            return value if isinstance(value, str) else json.dumps(value, sort_keys=True)

        responses = {
            (agent, str(row)): text(value)
            for agent, by_row in (data.get("responses") or {}).items()
            for row, value in by_row.items()
        }
        failures = {}
        for agent, by_row in (data.get("failures") or {}).items():
            for row, spec in by_row.items():
                spec = dict(spec or {})
                failures[(agent, str(row))] = MockFailure(
                    times=None if spec.get("always") else spec.get("times", 1),
                    response=text(spec.get("response", "not json")),
                    transport=bool(spec.get("transport", False)),
                )
        default = data.get("default")
        return cls(
            responses=responses,
            default=None if default is None else text(default),
            failures=failures,
            synthesize=bool(data.get("synthesize", False)),
            seed=int(data.get("seed", seed)),
        )

    def lookup(self, agent: str, row: int, attempt: int, schema: OutputSchema) -> str:
        for key in ((agent, str(row)), (agent, "*")):
            failure = self.failures.get(key)
            if failure is not None:
                if failure.active(attempt):
                    if failure.transport:
                        raise TransportError(f"injected transport failure for {agent}[{row}]")
                    return failure.response
                break
        for key in ((agent, str(row)), (agent, "*")):
            if key in self.responses:
                return self.responses[key]
        if self.default is not None:
            return self.default
        if self.synthesize:
            return json.dumps(synthesize_output(schema, f"{self.seed}|{agent}|{row}"), sort_keys=True)
        raise TransportError(f"mock script has no response for {agent}[{row}]")


def synthesize_output(schema: OutputSchema, seed: str) -> dict[str, Any]:
    """A schema-conforming payload that depends only on ``seed``."""
    rng = random.Random(seed)
    out: dict[str, Any] = {}
    for name, kind in schema.fields.items():
        if kind.kind == "text":
            out[name] = f"synthetic {name} {rng.randrange(10_000)}"
        elif kind.kind == "list_of_text":
            out[name] = [f"{name} item {rng.randrange(100)}" for _ in range(rng.randrange(4))]
        elif kind.kind == "integer_in_set":
            out[name] = rng.choice(kind.allowed)
        elif kind.kind == "integer_in_range":
            out[name] = rng.randint(kind.low, kind.high)
        else:
            out[name] = rng.randint(0, 100)
    return out


_DEFAULT_KEY_ENVS = (
    ("gemini", "GEMINI_API_KEY"),
    ("claude", "ANTHROPIC_API_KEY"),
    ("anthropic", "ANTHROPIC_API_KEY"),
    ("groq", "GROQ_API_KEY"),
)


def default_api_key_env(model: str, base_url: str | None) -> str:
    """Conventional credential variable for a model/endpoint pair."""
    haystack = f"{model} {base_url or ''}".lower()
    for needle, env in _DEFAULT_KEY_ENVS:
        if needle in haystack:
            return env
    return "OPENAI_API_KEY"


@dataclass(frozen=True)
class ProviderConfig:
    name: str
    kind: str
    model: str = "mock"
    base_url: str | None = None
    api_key_env: str | None = None
    model_args: dict[str, Any] = field(default_factory=dict)
    price: Price | None = None
    max_retries: int = DEFAULT_MAX_RETRIES
    timeout: float = DEFAULT_TIMEOUT
    backoff: float = DEFAULT_BACKOFF
    multimodal: bool = True
    script: MockScript | None = None

    def __post_init__(self) -> None:
        if self.kind not in PROVIDER_KINDS:
            raise ReviewFlowError(f"provider {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "openai_compatible":
            if self.api_key_env is None:
                object.__setattr__(
                    self, "api_key_env", default_api_key_env(self.model, self.base_url)
                )
            if not self.api_key_env:
                raise ReviewFlowError(f"provider {self.name!r}: api_key_env must be nonempty")
        if self.kind == "mock" and self.script is None:
            raise ReviewFlowError(f"provider {self.name!r}: mock providers need a script")
        if self.max_retries < 0:
            raise ReviewFlowError(f"provider {self.name!r}: max_retries must be >= 0")
        if self.timeout <= 0 or self.backoff < 0:
            raise ReviewFlowError(f"provider {self.name!r}: bad timeout/backoff")


def resolve_credential(config: ProviderConfig, environment: Mapping[str, str]) -> str:
    """Fetch the API key for ``config`` from ``environment``.

    The value is never logged; error messages name only the variable.
    """
    if config.kind == "mock":
        raise ValueError("mock providers have no credential")
    value = environment.get(config.api_key_env or "")
    if not value:
        raise AuthMissingError(
            f"provider {config.name!r}: environment variable {config.api_key_env} is not set"
        )
    return value


# --- backends -----------------------------------------------------------------


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    images: tuple[str, ...]
    schema: OutputSchema
    agent: str = ""
    row: int = 0
    model_args: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class RawCompletion:
    text: str
    input_tokens: int
    output_tokens: int


class Backend(Protocol):
    async def complete(self, request: CompletionRequest, attempt: int) -> RawCompletion: ...

    async def aclose(self) -> None: ...


def _approx_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


class MockBackend:
    def __init__(self, script: MockScript):
        self.script = script

    async def complete(self, request: CompletionRequest, attempt: int) -> RawCompletion:
        text = self.script.lookup(request.agent, request.row, attempt, request.schema)
        return RawCompletion(text, _approx_tokens(request.prompt), _approx_tokens(text))

    async def aclose(self) -> None:
        pass


def image_data_url(path: str) -> str:
    mime = mimetypes.guess_type(path)[0] or "application/octet-stream"
    payload = base64.b64encode(Path(path).read_bytes()).decode("ascii")
    return f"data:{mime};base64,{payload}"


class OpenAICompatibleBackend:
    """POSTs to ``{base_url}/chat/completions``."""

    def __init__(self, config: ProviderConfig, api_key: str, client: httpx.AsyncClient | None = None):
        self.config = config
        self._api_key = api_key
        self._client = client
        self._owns_client = client is None

    @property
    def url(self) -> str:
        return (self.config.base_url or DEFAULT_BASE_URL).rstrip("/") + "/chat/completions"

    def build_body(self, request: CompletionRequest) -> dict[str, Any]:
        if request.images:
            content: Any = [{"type": "text", "text": request.prompt}] + [
                {"type": "image_url", "image_url": {"url": image_data_url(p)}}
                for p in request.images
            ]
        else:
            content = request.prompt
        body = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": SYSTEM_MESSAGE},
                {"role": "user", "content": content},
            ],
        }
        body.update(self.config.model_args)
        body.update(request.model_args)
        return body

    async def complete(self, request: CompletionRequest, attempt: int) -> RawCompletion:
        if self._client is None:
            self._client = httpx.AsyncClient(timeout=self.config.timeout)
        headers = {"Authorization": f"Bearer {self._api_key}"}
        try:
            resp = await self._client.post(self.url, json=self.build_body(request), headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__} while calling {self.url}") from None
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code} from {self.url}")
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError):
            raise TransportError(f"malformed completion payload from {self.url}") from None
        usage = data.get("usage") or {}
        return RawCompletion(
            text,
            int(usage.get("prompt_tokens") or 0),
            int(usage.get("completion_tokens") or 0),
        )

    async def aclose(self) -> None:
        if self._client is not None and self._owns_client:
            await self._client.aclose()
            self._client = None


def _feedback(prompt: str, error: str) -> str:
    return (
        f"{prompt}\n\nYour previous answer was rejected: {error}\n"
        "Answer again with a single JSON object containing exactly the requested fields."
    )


class Provider:
    """A configured backend plus the parse/validate/retry loop."""

    def __init__(self, config: ProviderConfig, backend: Backend):
        self.config = config
        self.backend = backend

    async def complete_structured(
        self,
        prompt: str,
        images: Sequence[str],
        schema: OutputSchema,
        *,
        agent: str = "",
        row: int = 0,
        model_args: Mapping[str, Any] | None = None,
    ) -> tuple[ReviewOutput, Usage]:
        """Ask for a response conforming to ``schema``.

        Makes at most ``max_retries + 1`` attempts. Transport errors and
        invalid responses are both retried after an exponential backoff
        (``backoff``, ``2*backoff``, ...); invalid responses also get the
        validation error appended to the prompt.

        Raises:
            UnsupportedFeatureError: images given to a text-only provider.
            TransportError: the last attempt failed in transport.
            SchemaViolationError: the last attempt returned an invalid answer.
        """
        if not prompt:
            raise ReviewFlowError("prompt must be nonempty")
        if images and not self.config.multimodal:
            raise UnsupportedFeatureError(f"provider {self.config.name!r} is text-only")
        current = prompt
        in_tokens = out_tokens = 0
        last_error: ReviewFlowError | None = None
        attempts = self.config.max_retries + 1
        for attempt in range(attempts):
            if attempt and self.config.backoff:
                await asyncio.sleep(self.config.backoff * 2 ** (attempt - 1))
            request = CompletionRequest(
                current, tuple(images), schema, agent, row, dict(model_args or {})
            )
            try:
                raw = await asyncio.wait_for(
                    self.backend.complete(request, attempt), timeout=self.config.timeout
                )
            except asyncio.TimeoutError:
                last_error = TransportError(f"timed out after {self.config.timeout}s")
                continue
            except TransportError as exc:
                last_error = exc
                logger.debug("%s: transport failure on attempt %d: %s", self.config.name, attempt, exc)
                continue
            in_tokens += raw.input_tokens
            out_tokens += raw.output_tokens
            try:
                output = parse_response(raw.text, schema)
            except SchemaViolationError as exc:
                last_error = exc
                logger.debug("%s: invalid response on attempt %d: %s", self.config.name, attempt, exc)
                current = _feedback(prompt, str(exc))
                continue
            return output, Usage(in_tokens, out_tokens, attempt)
        assert last_error is not None
        if isinstance(last_error, SchemaViolationError):
            raise SchemaViolationError(
                f"still invalid after {attempts} attempts: {last_error}",
                raw=last_error.raw,
                attempts=attempts,
            )
        raise TransportError(f"failed after {attempts} attempts: {last_error}")

    def cost(self, usage: Usage) -> Decimal:
        if self.config.price is None:
            return Decimal(0)
        return estimate_cost(usage, self.config.price)

    async def aclose(self) -> None:
        await self.backend.aclose()


def make_provider(config: ProviderConfig, environment: Mapping[str, str] | None = None) -> Provider:
    """Instantiate the backend for ``config``.

    Raises:
        AuthMissingError: the credential variable is unset (non-mock kinds).
    """
    if config.kind == "mock":
        return Provider(config, MockBackend(config.script))
    key = resolve_credential(config, os.environ if environment is None else environment)
    return Provider(config, OpenAICompatibleBackend(config, key))


async def complete_structured(
    config: ProviderConfig,
    prompt: str,
    images: Sequence[str],
    schema: OutputSchema,
    *,
    environment: Mapping[str, str] | None = None,
    agent: str = "",
    row: int = 0,
) -> tuple[ReviewOutput, Usage]:
    """One-shot convenience wrapper around :meth:`Provider.complete_structured`."""
    provider = make_provider(config, environment)
    try:
        return await provider.complete_structured(prompt, images, schema, agent=agent, row=row)
    finally:
        await provider.aclose()
