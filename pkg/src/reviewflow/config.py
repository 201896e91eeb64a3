"""Declarative workflow configuration (TOML).

A config file has ``[settings]``, ``[[provider]]``, ``[[agent]]``, ``[[round]]``
and an optional ``[consensus]`` section; ``configs/screening.toml`` in the
repository is a complete example. Unknown keys are rejected so that typos do not
silently fall back to defaults.
"""

from __future__ import annotations

import importlib
import json
import os
import sys
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli_w
from dotenv import dotenv_values

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .agents import (
    AbstractionSpec,
    AgentSpec,
    ContextSource,
    CustomSpec,
    ScoringSpec,
    TitleAbstractSpec,
)
from .consensus import ConsensusConfig
from .errors import ConfigError, FilterSyntaxError, ReviewFlowError
from .filters import parse_filter, to_source
from .model import DEFAULT_MAX_CONCURRENCY, RoundSpec, WorkflowSchema
from .providers import (
    DEFAULT_BACKOFF,
    DEFAULT_MAX_RETRIES,
    DEFAULT_TIMEOUT,
    FieldKind,
    MockScript,
    OutputSchema,
    Price,
    ProviderConfig,
)

_PROVIDER_KEYS = {
    "name", "kind", "model", "base_url", "api_key_env", "model_args", "price",
    "max_retries", "timeout", "backoff", "multimodal", "script",
}
_AGENT_KEYS = {
    "name", "provider", "kind", "backstory", "reasoning", "examples", "model_args",
    "context", "context_lookup", "context_file", "context_strict",
    "scoring_task", "scoring_set", "scoring_rules",
    "inclusion_criteria", "exclusion_criteria",
    "abstraction_keys", "key_descriptions",
    "prompt_template", "response_schema", "input_description", "variables",
}
_ROUND_KEYS = {"id", "reviewers", "text_inputs", "image_inputs", "filter"}
_CONSENSUS_KEYS = {"junior", "senior", "output", "neutral_score"}
_SETTINGS_KEYS = {"max_concurrency", "seed", "env_file"}
_TOP_KEYS = {"settings", "provider", "agent", "round", "consensus"}


@dataclass(frozen=True)
class Settings:
    max_concurrency: int = DEFAULT_MAX_CONCURRENCY
    seed: int = 0
    env_file: str | None = None


@dataclass
class WorkflowConfig:
    providers: dict[str, ProviderConfig]
    agents: dict[str, AgentSpec]
    rounds: tuple[RoundSpec, ...]
    consensus: ConsensusConfig | None = None
    settings: Settings = field(default_factory=Settings)
    environment: dict[str, str] = field(default_factory=dict, repr=False, compare=False)

    @property
    def schema(self) -> WorkflowSchema:
        return WorkflowSchema(self.rounds, self.settings.max_concurrency)

    @property
    def mock_only(self) -> bool:
        return all(p.kind == "mock" for p in self.providers.values())


def _check_keys(section: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def _require(section: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in section:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return section[key]


def _load_script(value: Any, base_dir: Path, seed: int) -> MockScript:
    if isinstance(value, str):
        path = base_dir / value
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load mock script {str(path)!r}: {exc}") from None
    else:
        data = value
    return MockScript.from_dict(data, seed=seed)


def _provider(section: dict, base_dir: Path, seed: int) -> ProviderConfig:
    where = f"provider {section.get('name', '?')!r}"
    _check_keys(section, _PROVIDER_KEYS, where)
    price = section.get("price")
    if price is not None:
        price = Price.of(_require(price, "input", where), _require(price, "output", where))
    script = section.get("script")
    if script is not None:
        script = _load_script(script, base_dir, seed)
    return ProviderConfig(
        name=_require(section, "name", where),
        kind=_require(section, "kind", where),
        model=section.get("model", "mock"),
        base_url=section.get("base_url"),
        api_key_env=section.get("api_key_env"),
        model_args=dict(section.get("model_args") or {}),
        price=price,
        max_retries=int(section.get("max_retries", DEFAULT_MAX_RETRIES)),
        timeout=float(section.get("timeout", DEFAULT_TIMEOUT)),
        backoff=float(section.get("backoff", DEFAULT_BACKOFF)),
        multimodal=bool(section.get("multimodal", True)),
        script=script,
    )


def _import_lookup(ref: str, base_dir: Path):
    module_name, _, attr = ref.partition(":")
    if not module_name or not attr:
        raise ConfigError(f"context_lookup {ref!r} must look like 'module:function'")
    added = str(base_dir) not in sys.path
    if added:
        sys.path.insert(0, str(base_dir))
    try:
        func = getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot import context_lookup {ref!r}: {exc}") from None
    finally:
        if added:
            sys.path.remove(str(base_dir))
    if not callable(func):
        raise ConfigError(f"context_lookup {ref!r} is not callable")
    return func


def _context(section: dict, base_dir: Path, where: str) -> ContextSource | None:
    given = [k for k in ("context", "context_lookup", "context_file") if k in section]
    if len(given) > 1:
        raise ConfigError(f"{where}: use only one of context, context_lookup, context_file")
    strict = bool(section.get("context_strict", False))
    if not given:
        return None
    key = given[0]
    value = section[key]
    if key == "context":
        return ContextSource(static=value)
    if key == "context_lookup":
        return ContextSource(lookup=_import_lookup(value, base_dir), strict=strict, origin=f"python:{value}")
    path = base_dir / value
    try:
        mapping = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{where}: cannot load context_file {str(path)!r}: {exc}") from None
    lookup = mapping.__getitem__ if strict else (lambda text: mapping.get(text, ""))
    return ContextSource(lookup=lookup, strict=strict, origin=f"file:{value}")


def _agent(section: dict, base_dir: Path) -> AgentSpec:
    where = f"agent {section.get('name', '?')!r}"
    _check_keys(section, _AGENT_KEYS, where)
    kind = _require(section, "kind", where)
    if kind == "scoring":
        spec: Any = ScoringSpec(
            _require(section, "scoring_task", where),
            tuple(_require(section, "scoring_set", where)),
            section.get("scoring_rules", ""),
        )
    elif kind == "title_abstract":
        spec = TitleAbstractSpec(
            _require(section, "inclusion_criteria", where),
            section.get("exclusion_criteria", "Not specified"),
        )
    elif kind == "abstraction":
        spec = AbstractionSpec(
            dict(_require(section, "abstraction_keys", where)),
            dict(_require(section, "key_descriptions", where)),
        )
    elif kind == "custom":
        schema = {
            name: FieldKind.from_spec(kind_spec)
            for name, kind_spec in _require(section, "response_schema", where).items()
        }
        spec = CustomSpec(
            _require(section, "prompt_template", where),
            OutputSchema(schema),
            section.get("input_description", ""),
            dict(section.get("variables") or {}),
        )
    else:
        raise ConfigError(f"{where}: unknown kind {kind!r}")
    examples = tuple(
        (_require(ex, "input", where), _require(ex, "output", where))
        for ex in section.get("examples", [])
    )
    return AgentSpec(
        name=_require(section, "name", where),
        provider=_require(section, "provider", where),
        kind=kind,
        spec=spec,
        backstory=section.get("backstory", ""),
        reasoning=section.get("reasoning"),
        additional_context=_context(section, base_dir, where),
        examples=examples,
        model_args=dict(section.get("model_args") or {}),
    )


def _round(section: dict) -> RoundSpec:
    where = f"round {section.get('id', '?')!r}"
    _check_keys(section, _ROUND_KEYS, where)
    source = section.get("filter")
    expr = None
    if source is not None:
        try:
            expr = parse_filter(source)
        except FilterSyntaxError as exc:
            raise ConfigError(f"{where}: filter syntax error: {exc}") from None
    return RoundSpec(
        round_id=str(_require(section, "id", where)),
        reviewers=tuple(_require(section, "reviewers", where)),
        text_inputs=tuple(_require(section, "text_inputs", where)),
        image_inputs=tuple(section.get("image_inputs", ())),
        filter=expr,
    )


def _by_name(items: list, what: str) -> dict:
    out = {}
    for item in items:
        if item.name in out:
            raise ConfigError(f"duplicate {what} name {item.name!r}")
        out[item.name] = item
    return out


def parse_config(
    data: Mapping[str, Any],
    base_dir: str | Path = ".",
    environ: Mapping[str, str] | None = None,
    env_file: str | Path | None = None,
) -> WorkflowConfig:
    """Build and cross-check a config from already-parsed TOML data."""
    base_dir = Path(base_dir)
    try:
        _check_keys(data, _TOP_KEYS, "config")
        raw_settings = dict(data.get("settings") or {})
        _check_keys(raw_settings, _SETTINGS_KEYS, "settings")
        settings = Settings(
            max_concurrency=int(raw_settings.get("max_concurrency", DEFAULT_MAX_CONCURRENCY)),
            seed=int(raw_settings.get("seed", 0)),
            env_file=raw_settings.get("env_file"),
        )
        if settings.max_concurrency < 1:
            raise ConfigError("settings: max_concurrency must be positive")
        providers = _by_name([_provider(p, base_dir, settings.seed) for p in data.get("provider", [])], "provider")
        agents = _by_name([_agent(a, base_dir) for a in data.get("agent", [])], "agent")
        rounds = tuple(_round(r) for r in data.get("round", []))
        consensus = None
        if "consensus" in data:
            raw = data["consensus"]
            _check_keys(raw, _CONSENSUS_KEYS, "consensus")
            consensus = ConsensusConfig(
                tuple(_require(raw, "junior", "consensus")),
                _require(raw, "senior", "consensus"),
                raw.get("output", "final_score"),
                int(raw.get("neutral_score", 3)),
            )
    except ConfigError:
        raise
    except (ReviewFlowError, TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None

    problems = []
    for agent in agents.values():
        if agent.provider not in providers:
            problems.append(f"agent {agent.name!r} references unknown provider {agent.provider!r}")
    seen_rounds = set()
    for rnd in rounds:
        if rnd.round_id in seen_rounds:
            problems.append(f"round id {rnd.round_id!r} is used twice")
        seen_rounds.add(rnd.round_id)
        for name in rnd.reviewers:
            if name not in agents:
                problems.append(f"round {rnd.round_id!r} references unknown agent {name!r}")
    if problems:
        raise ConfigError("; ".join(problems))

    environment = dict(os.environ if environ is None else environ)
    env_path = env_file if env_file is not None else settings.env_file
    if env_path is not None:
        path = Path(env_path) if env_file is not None else base_dir / env_path
        if not path.is_file():
            raise ConfigError(f"env file {str(path)!r} not found")
        for key, value in dotenv_values(path).items():
            if value is not None and key not in environment:
                environment[key] = value

    return WorkflowConfig(providers, agents, rounds, consensus, settings, environment)


def load_config(
    path: str | Path,
    environ: Mapping[str, str] | None = None,
    env_file: str | Path | None = None,
) -> WorkflowConfig:
    """Read, validate and cross-check a workflow config file.

    Variables from the env file fill gaps in ``environ`` (default
    ``os.environ``) but never override it.

    Raises:
        ConfigError: TOML syntax (with line/column), unknown keys, dangling
            references or filter syntax errors.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {str(path)!r}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data, path.parent, environ, env_file)


# --- canonical serialization --------------------------------------------------


def _script_dict(script: MockScript) -> dict:
    responses: dict[str, dict[str, str]] = {}
    for (agent, row), text in sorted(script.responses.items()):
        responses.setdefault(agent, {})[row] = text
    failures: dict[str, dict[str, dict]] = {}
    for (agent, row), fail in sorted(script.failures.items()):
        entry: dict[str, Any] = {"response": fail.response, "transport": fail.transport}
        if fail.times is None:
            entry["always"] = True
        else:
            entry["times"] = fail.times
        failures.setdefault(agent, {})[row] = entry
    out: dict[str, Any] = {"synthesize": script.synthesize, "seed": script.seed}
    if script.default is not None:
        out["default"] = script.default
    if responses:
        out["responses"] = responses
    if failures:
        out["failures"] = failures
    return out


def _provider_dict(p: ProviderConfig) -> dict:
    out: dict[str, Any] = {"name": p.name, "kind": p.kind, "model": p.model}
    if p.base_url is not None:
        out["base_url"] = p.base_url
    if p.api_key_env is not None:
        out["api_key_env"] = p.api_key_env
    if p.model_args:
        out["model_args"] = dict(p.model_args)
    if p.price is not None:
        out["price"] = {
            "input": format(p.price.input_cost_per_token, "f"),
            "output": format(p.price.output_cost_per_token, "f"),
        }
    out.update(max_retries=p.max_retries, timeout=p.timeout, backoff=p.backoff, multimodal=p.multimodal)
    if p.script is not None:
        out["script"] = _script_dict(p.script)
    return out


def _agent_dict(a: AgentSpec) -> dict:
    out: dict[str, Any] = {"name": a.name, "provider": a.provider, "kind": a.kind}
    if a.backstory:
        out["backstory"] = a.backstory
    if a.reasoning is not None:
        out["reasoning"] = a.reasoning
    spec = a.spec
    if isinstance(spec, ScoringSpec):
        out.update(scoring_task=spec.scoring_task, scoring_set=list(spec.scoring_set), scoring_rules=spec.scoring_rules)
    elif isinstance(spec, TitleAbstractSpec):
        out.update(inclusion_criteria=spec.inclusion_criteria, exclusion_criteria=spec.exclusion_criteria)
    elif isinstance(spec, AbstractionSpec):
        out.update(abstraction_keys=dict(spec.abstraction_keys), key_descriptions=dict(spec.key_descriptions))
    else:
        out.update(
            prompt_template=spec.prompt_template,
            response_schema=spec.response_schema.to_dict(),
            input_description=spec.input_description,
        )
        if spec.variables:
            out["variables"] = dict(spec.variables)
    ctx = a.additional_context
    if ctx is not None:
        if ctx.lookup is None:
            out["context"] = ctx.static or ""
        elif ctx.origin and ctx.origin.startswith("python:"):
            out["context_lookup"] = ctx.origin[len("python:") :]
        elif ctx.origin and ctx.origin.startswith("file:"):
            out["context_file"] = ctx.origin[len("file:") :]
        else:
            raise ConfigError(f"agent {a.name!r}: in-memory context lookups cannot be serialized")
        if ctx.lookup is not None and ctx.strict:
            out["context_strict"] = True
    if a.examples:
        out["examples"] = [{"input": i, "output": o} for i, o in a.examples]
    if a.model_args:
        out["model_args"] = dict(a.model_args)
    return out


def _round_dict(r: RoundSpec) -> dict:
    out: dict[str, Any] = {"id": r.round_id, "reviewers": list(r.reviewers), "text_inputs": list(r.text_inputs)}
    if r.image_inputs:
        out["image_inputs"] = list(r.image_inputs)
    if r.filter is not None:
        out["filter"] = to_source(r.filter)
    return out


def config_to_dict(config: WorkflowConfig) -> dict:
    settings: dict[str, Any] = {"max_concurrency": config.settings.max_concurrency, "seed": config.settings.seed}
    if config.settings.env_file is not None:
        settings["env_file"] = config.settings.env_file
    out: dict[str, Any] = {
        "settings": settings,
        "provider": [_provider_dict(p) for p in config.providers.values()],
        "agent": [_agent_dict(a) for a in config.agents.values()],
        "round": [_round_dict(r) for r in config.rounds],
    }
    if config.consensus is not None:
        c = config.consensus
        out["consensus"] = {
            "junior": list(c.junior_columns),
            "senior": c.senior_column,
            "output": c.output_column,
            "neutral_score": c.neutral_score,
        }
    return out


def dump_config(config: WorkflowConfig) -> str:
    """Canonical TOML text; loading it yields an equivalent config."""
    return tomli_w.dumps(config_to_dict(config), multiline_strings=True)
