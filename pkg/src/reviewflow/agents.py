"""Reviewer agents: prompt construction, provider calls and output validation."""

from __future__ import annotations

import asyncio
import logging
import os
from collections.abc import Awaitable, Callable, Mapping, Sequence
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, NamedTuple, TypeVar, Union

from . import prompts
from .errors import (
    ContextLookupError,
    ImageValidationError,
    ReviewFlowError,
    UnresolvedPlaceholderError,
)
from .model import IDENT_RE, Cell, Failure, ReviewOutput
from .providers import FieldKind, OutputSchema, Provider, Usage

logger = logging.getLogger(__name__)

AGENT_KINDS = ("scoring", "title_abstract", "abstraction", "custom")
REASONING_TYPES = ("brief", "cot")
IMAGE_EXTENSIONS = frozenset({"png", "jpg", "jpeg", "webp", "gif"})
CUSTOM_BUILTIN_PLACEHOLDERS = ("item", "additional_context", "examples")
CUSTOM_AGENT_FIELDS = ("name", "backstory", "input_description")

T = TypeVar("T")


@dataclass(frozen=True)
class ScoringSpec:
    scoring_task: str
    scoring_set: tuple[int, ...]
    scoring_rules: str = ""

    def __post_init__(self) -> None:
        values = list(self.scoring_set)
        if not values:
            raise ReviewFlowError("scoring_set must be nonempty")
        if len(set(values)) != len(values):
            raise ReviewFlowError(f"scoring_set has duplicates: {values}")
        if any(isinstance(v, bool) or not isinstance(v, int) for v in values):
            raise ReviewFlowError("scoring_set must contain integers")
        object.__setattr__(self, "scoring_set", tuple(sorted(values)))


@dataclass(frozen=True)
class TitleAbstractSpec:
    inclusion_criteria: str
    exclusion_criteria: str = "Not specified"

    def __post_init__(self) -> None:
        if not self.inclusion_criteria.strip():
            raise ReviewFlowError("inclusion_criteria must be nonempty")


@dataclass(frozen=True)
class AbstractionSpec:
    abstraction_keys: dict[str, str]
    key_descriptions: dict[str, str]

    def __post_init__(self) -> None:
        if not self.abstraction_keys:
            raise ReviewFlowError("abstraction_keys must be nonempty")
        for key, kind in self.abstraction_keys.items():
            if kind not in ("text", "integer", "list_of_text"):
                raise ReviewFlowError(f"abstraction key {key!r}: unsupported kind {kind!r}")
        missing = [k for k in self.abstraction_keys if not self.key_descriptions.get(k)]
        if missing:
            raise ReviewFlowError(f"abstraction keys without a description: {missing}")


@dataclass(frozen=True)
class CustomSpec:
    prompt_template: str
    response_schema: OutputSchema
    input_description: str = ""
    variables: dict[str, str] = field(default_factory=dict)


KindSpec = Union[ScoringSpec, TitleAbstractSpec, AbstractionSpec, CustomSpec]
_KIND_SPECS = {
    "scoring": ScoringSpec,
    "title_abstract": TitleAbstractSpec,
    "abstraction": AbstractionSpec,
    "custom": CustomSpec,
}


@dataclass(frozen=True)
class ContextSource:
    """Extra text for the prompt: fixed, or looked up per item.

    ``lookup`` receives the rendered item text. Unless ``strict``, a failing
    lookup yields empty context instead of failing the item.
    """

    static: str | None = None
    lookup: Callable[[str], str] | None = None
    strict: bool = False
    origin: str | None = None

    def resolve(self, item_text: str) -> str:
        if self.lookup is None:
            return self.static or ""
        try:
            return self.lookup(item_text) or ""
        except Exception as exc:
            if self.strict:
                raise ContextLookupError(f"context lookup failed: {exc}") from exc
            logger.warning("context lookup failed, continuing without context: %s", exc)
            return ""


@dataclass(frozen=True)
class AgentSpec:
    name: str
    provider: str
    kind: str
    spec: KindSpec
    backstory: str = ""
    reasoning: str | None = None
    additional_context: ContextSource | None = None
    examples: tuple[tuple[str, str], ...] = ()
    model_args: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not IDENT_RE.match(self.name or ""):
            raise ReviewFlowError(f"agent name {self.name!r} must match [A-Za-z0-9_-]+")
        if self.kind not in AGENT_KINDS:
            raise ReviewFlowError(f"agent {self.name!r}: unknown kind {self.kind!r}")
        if not isinstance(self.spec, _KIND_SPECS[self.kind]):
            raise ReviewFlowError(
                f"agent {self.name!r}: kind {self.kind!r} needs a {_KIND_SPECS[self.kind].__name__}"
            )
        if self.kind in ("scoring", "title_abstract"):
            if self.reasoning is None:
                object.__setattr__(self, "reasoning", "brief")
            if self.reasoning not in REASONING_TYPES:
                raise ReviewFlowError(f"agent {self.name!r}: reasoning must be brief or cot")
        elif self.reasoning is not None:
            raise ReviewFlowError(f"agent {self.name!r}: reasoning applies to scoring kinds only")
        if isinstance(self.spec, CustomSpec):
            allowed = set(CUSTOM_BUILTIN_PLACEHOLDERS) | set(CUSTOM_AGENT_FIELDS) | set(self.spec.variables)
            unknown = [p for p in prompts.placeholders(self.spec.prompt_template) if p not in allowed]
            if unknown:
                raise UnresolvedPlaceholderError(
                    f"agent {self.name!r}: undeclared placeholders {unknown}"
                )


def output_schema_for(agent: AgentSpec) -> OutputSchema:
    spec = agent.spec
    if isinstance(spec, ScoringSpec):
        return OutputSchema(
            {
                "reasoning": FieldKind.text(nonempty=True),
                "score": FieldKind.integer_in_set(spec.scoring_set),
                "certainty": FieldKind.integer_in_range(0, 100),
            }
        )
    if isinstance(spec, TitleAbstractSpec):
        return OutputSchema(
            {
                "reasoning": FieldKind.text(nonempty=True),
                "evaluation": FieldKind.integer_in_range(1, 5),
                "certainty": FieldKind.integer_in_range(0, 100),
            }
        )
    if isinstance(spec, AbstractionSpec):
        return OutputSchema({k: FieldKind(kind) for k, kind in spec.abstraction_keys.items()})
    return spec.response_schema


def render_item(item_fields: Mapping[str, Cell] | str) -> str:
    """``column: value`` lines in input order; a bare string is used as is."""
    if isinstance(item_fields, str):
        return item_fields
    return "\n".join(f"{name}: {'' if value is None else value}" for name, value in item_fields.items())


def render_examples(examples: Sequence[tuple[str, str]]) -> str:
    return "\n\n".join(f"Input:\n{inp}\nExpected output:\n{out}" for inp, out in examples)


def _abstraction_key_lines(spec: AbstractionSpec) -> str:
    return "\n".join(
        f"- {key} ({kind.replace('_', ' ')}): {spec.key_descriptions[key]}"
        for key, kind in spec.abstraction_keys.items()
    )


def build_prompt(agent: AgentSpec, item_fields: Mapping[str, Cell] | str, context_text: str = "") -> str:
    """Render the full prompt for one item.

    Raises:
        UnresolvedPlaceholderError: a custom template references an unknown variable.
    """
    schema = output_schema_for(agent)
    variables: dict[str, str] = {
        "name": agent.name,
        "backstory": agent.backstory,
        "item": render_item(item_fields),
        "additional_context": context_text or "",
        "examples": render_examples(agent.examples),
        "schema": schema.describe(),
    }
    spec = agent.spec

    if isinstance(spec, CustomSpec):
        variables["input_description"] = spec.input_description
        variables.update(spec.variables)
        body = prompts.render(spec.prompt_template, variables).strip()
        return body + "\n\n" + prompts.render(prompts.OUTPUT, variables)

    role = prompts.ROLE if agent.backstory.strip() else prompts.ROLE_NO_BACKSTORY
    sections = [role]
    if isinstance(spec, ScoringSpec):
        variables.update(
            scoring_task=spec.scoring_task,
            scoring_set=", ".join(str(v) for v in spec.scoring_set),
            scoring_rules=spec.scoring_rules or "Not specified",
        )
        sections.append(prompts.SCORING_TASK)
    elif isinstance(spec, TitleAbstractSpec):
        variables.update(
            inclusion_criteria=spec.inclusion_criteria,
            exclusion_criteria=spec.exclusion_criteria or "Not specified",
        )
        sections.append(prompts.TITLE_ABSTRACT_TASK)
    else:
        variables["abstraction_keys"] = _abstraction_key_lines(spec)
        sections.append(prompts.ABSTRACTION_TASK)
    if agent.reasoning:
        sections.append(prompts.REASONING_DIRECTIVES[agent.reasoning])
        sections.append(prompts.CERTAINTY)
    sections += [prompts.EXAMPLES, prompts.ITEM, prompts.CONTEXT, prompts.OUTPUT]

    rendered = (prompts.render_section(s, variables) for s in sections)
    return "\n\n".join(s for s in rendered if s)


@dataclass(frozen=True)
class ImageIssue:
    path: str
    code: str  # "missing_file" | "bad_extension"


def validate_images(paths: Sequence[str]) -> list[ImageIssue]:
    """Check every path; an empty result means all images are usable."""
    issues = []
    for path in paths:
        ext = os.path.splitext(path)[1].lower().lstrip(".")
        if ext not in IMAGE_EXTENSIONS:
            issues.append(ImageIssue(path, "bad_extension"))
        if not os.path.isfile(path):
            issues.append(ImageIssue(path, "missing_file"))
    return issues


class ItemReview(NamedTuple):
    output: ReviewOutput
    usage: Usage
    cost: Decimal


async def review_item(
    agent: AgentSpec,
    item_fields: Mapping[str, Cell] | str,
    provider: Provider,
    images: Sequence[str] = (),
    *,
    row: int = 0,
) -> ItemReview:
    """Review one item end to end.

    Raises:
        ImageValidationError: an image path is missing or has a bad extension.
        ContextLookupError: a strict dynamic context lookup failed.
        ReviewFlowError: any provider error (transport, schema violation, ...).
    """
    issues = validate_images(images)
    if issues:
        detail = ", ".join(f"{i.path} ({i.code})" for i in issues)
        raise ImageValidationError(f"invalid images: {detail}")
    context = ""
    if agent.additional_context is not None:
        context = agent.additional_context.resolve(render_item(item_fields))
    prompt = build_prompt(agent, item_fields, context)
    output, usage = await provider.complete_structured(
        prompt,
        images,
        output_schema_for(agent),
        agent=agent.name,
        row=row,
        model_args=agent.model_args,
    )
    return ItemReview(output, usage, provider.cost(usage))


@dataclass(frozen=True)
class ItemResult:
    """Outcome for one item of a batch: either a review or a failure."""

    review: ItemReview | None = None
    failure: Failure | None = None

    @property
    def failed(self) -> bool:
        return self.failure is not None

    @property
    def output(self) -> ReviewOutput | None:
        return None if self.review is None else self.review.output

    @property
    def cost(self) -> Decimal:
        return Decimal(0) if self.review is None else self.review.cost


async def run_bounded(jobs: Sequence[Callable[[], Awaitable[T]]], limit: int) -> list[T]:
    """Run ``jobs`` with at most ``limit`` in flight; results keep job order."""
    if limit < 1:
        raise ValueError("limit must be >= 1")
    results: list[Any] = [None] * len(jobs)
    pending = iter(range(len(jobs)))

    async def worker() -> None:
        for i in pending:
            results[i] = await jobs[i]()

    await asyncio.gather(*(worker() for _ in range(min(limit, len(jobs)))))
    return results


async def safe_review(
    agent: AgentSpec,
    item_fields: Mapping[str, Cell] | str,
    provider: Provider,
    images: Sequence[str] = (),
    *,
    row: int,
    round_id: str | None = None,
) -> ItemResult:
    """Like :func:`review_item` but turns library errors into a failure record."""
    try:
        return ItemResult(review=await review_item(agent, item_fields, provider, images, row=row))
    except ReviewFlowError as exc:
        return ItemResult(failure=Failure(round_id, agent.name, row, exc.code, str(exc)))


async def review_items(
    agent: AgentSpec,
    items: Sequence[Mapping[str, Cell] | str],
    provider: Provider,
    concurrency: int = 10,
) -> tuple[list[ItemResult], Decimal]:
    """Review a batch; ``results[i]`` always belongs to ``items[i]``.

    Failed items are reported in place, never raised.
    """
    jobs = [
        (lambda i=i, item=item: safe_review(agent, item, provider, row=i))
        for i, item in enumerate(items)
    ]
    results = await run_bounded(jobs, concurrency)
    return results, sum((r.cost for r in results), Decimal(0))
