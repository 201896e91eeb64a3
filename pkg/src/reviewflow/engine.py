"""Multi-round workflow execution.

Rounds run strictly in order. Inside a round every (agent, row) pair in scope
is one provider call, and all of them share a single pool of
``max_concurrency`` slots. Results are collected by the coordinator and written
as new columns only once the round has finished, so later rounds (and filters)
always see fully populated columns.
"""

from __future__ import annotations

import asyncio
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Union

from .agents import AgentSpec, ItemResult, output_schema_for, run_bounded, safe_review
from .errors import ReviewFlowError
from .filters import eval_filter, referenced_columns
from .model import (
    CostLedger,
    Failure,
    LedgerEntry,
    ReviewTable,
    RoundSpec,
    WorkflowSchema,
    append_columns,
    make_column_name,
)
from .providers import Provider, ProviderConfig, make_provider

logger = logging.getLogger(__name__)

OUTPUT_FIELD = "output"


@dataclass(frozen=True)
class SchemaIssue:
    code: str  # unknown_agent | unknown_provider | unknown_column | duplicate_round | duplicate_column
    round_id: str | None
    detail: str

    def __str__(self) -> str:
        where = f"round {self.round_id}: " if self.round_id else ""
        return f"{self.code}: {where}{self.detail}"


class WorkflowValidationError(ReviewFlowError):
    code = "invalid_workflow"

    def __init__(self, issues: Sequence[SchemaIssue]):
        super().__init__("; ".join(str(i) for i in issues))
        self.issues = list(issues)


def round_output_columns(round_spec: RoundSpec, agents: Mapping[str, AgentSpec]) -> list[str]:
    """Columns a round appends, in order: per reviewer, each schema field then ``output``."""
    out = []
    for name in round_spec.reviewers:
        agent = agents.get(name)
        if agent is None:
            continue
        for f in output_schema_for(agent).names + [OUTPUT_FIELD]:
            out.append(make_column_name(round_spec.round_id, name, f))
    return out


def validate_schema(
    schema: WorkflowSchema,
    base_columns: Sequence[str],
    agents: Mapping[str, AgentSpec],
    providers: Mapping[str, object],
) -> list[SchemaIssue]:
    """Check a schema against the starting columns. Returns every issue found."""
    issues: list[SchemaIssue] = []
    available = set(base_columns)
    seen_rounds: set[str] = set()
    for rnd in schema.rounds:
        rid = rnd.round_id
        if rid in seen_rounds:
            issues.append(SchemaIssue("duplicate_round", rid, f"round id {rid!r} used twice"))
        seen_rounds.add(rid)
        for name in rnd.reviewers:
            agent = agents.get(name)
            if agent is None:
                issues.append(SchemaIssue("unknown_agent", rid, f"no agent named {name!r}"))
            elif agent.provider not in providers:
                issues.append(
                    SchemaIssue(
                        "unknown_provider", rid, f"agent {name!r} uses unknown provider {agent.provider!r}"
                    )
                )
        needed = list(rnd.text_inputs) + list(rnd.image_inputs)
        if rnd.filter is not None:
            needed += referenced_columns(rnd.filter)
        for col in dict.fromkeys(needed):
            if col not in available:
                issues.append(SchemaIssue("unknown_column", rid, f"column {col!r} is not available"))
        for col in round_output_columns(rnd, agents):
            if col in available:
                issues.append(SchemaIssue("duplicate_column", rid, f"column {col!r} already exists"))
            available.add(col)
    return issues


def rows_in_scope(
    round_spec: RoundSpec, table: ReviewTable, failures: list[Failure] | None = None
) -> list[int]:
    """Indices of rows passing the round's filter, ascending.

    Rows whose filter evaluation raises are skipped and, when ``failures`` is
    given, recorded there.
    """
    if round_spec.filter is None:
        return list(range(len(table)))
    keep = []
    for i in range(len(table)):
        try:
            if eval_filter(round_spec.filter, table.row(i)):
                keep.append(i)
        except ReviewFlowError as exc:
            if failures is not None:
                failures.append(Failure(round_spec.round_id, None, i, exc.code, str(exc)))
    return keep


@dataclass
class RoundStats:
    round_id: str
    rows_considered: int
    rows_passed_filter: int
    rows_skipped_null_inputs: int = 0
    calls: int = 0
    failures: list[Failure] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "round": self.round_id,
            "rows_considered": self.rows_considered,
            "rows_passed_filter": self.rows_passed_filter,
            "rows_skipped_null_inputs": self.rows_skipped_null_inputs,
            "calls": self.calls,
            "failures": [f.to_dict() for f in self.failures],
        }


@dataclass
class RunReport:
    table: ReviewTable
    ledger: CostLedger
    rounds: list[RoundStats]

    @property
    def failures(self) -> list[Failure]:
        return [f for r in self.rounds for f in r.failures]

    def to_dict(self) -> dict:
        """JSON-ready summary (the table itself is written separately)."""
        return {
            "rows": len(self.table),
            "columns": list(self.table.columns),
            "rounds": [r.to_dict() for r in self.rounds],
            "failures": [f.to_dict() for f in self.failures],
            "ledger": self.ledger.to_dict(),
        }


ProviderLike = Union[Provider, ProviderConfig]


async def arun_workflow(
    schema: WorkflowSchema,
    table: ReviewTable,
    agents: Mapping[str, AgentSpec],
    providers: Mapping[str, ProviderLike],
    *,
    environment: Mapping[str, str] | None = None,
) -> RunReport:
    """Execute ``schema`` over ``table``.

    ``providers`` may hold ready :class:`Provider` objects or bare configs;
    configs are instantiated here and closed when the run ends.

    Raises:
        WorkflowValidationError: the schema does not fit the table.
        AuthMissingError: a provider that is actually used has no credential.
    """
    issues = validate_schema(schema, table.columns, agents, providers)
    if issues:
        raise WorkflowValidationError(issues)

    used = {agents[n].provider for rnd in schema.rounds for n in rnd.reviewers}
    live: dict[str, Provider] = {}
    owned: list[Provider] = []
    for name in sorted(used):
        value = providers[name]
        if isinstance(value, ProviderConfig):
            value = make_provider(value, environment)
            owned.append(value)
        live[name] = value

    ledger = CostLedger()
    stats: list[RoundStats] = []
    base = set(table.columns)
    try:
        for rnd in schema.rounds:
            table, round_stats = await _run_round(rnd, table, base, agents, live, ledger, schema.max_concurrency)
            stats.append(round_stats)
    finally:
        for provider in owned:
            await provider.aclose()
    return RunReport(table, ledger, stats)


async def _run_round(
    rnd: RoundSpec,
    table: ReviewTable,
    base_columns: set[str],
    agents: Mapping[str, AgentSpec],
    providers: Mapping[str, Provider],
    ledger: CostLedger,
    max_concurrency: int,
) -> tuple[ReviewTable, RoundStats]:
    failures: list[Failure] = []
    passed = rows_in_scope(rnd, table, failures)
    # Inputs produced by earlier rounds are null when those rounds skipped or failed the row.
    chained = [c for c in rnd.text_inputs if c not in base_columns]
    scope = [i for i in passed if all(table.row(i)[c] is not None for c in chained)]

    items = {}
    for i in scope:
        row = table.row(i)
        fields = {c: row[c] for c in rnd.text_inputs}
        images = [row[c] for c in rnd.image_inputs if row[c]]
        items[i] = (fields, images)

    jobs = []
    keys = []
    for name in rnd.reviewers:
        agent = agents[name]
        provider = providers[agent.provider]
        for i in scope:
            fields, images = items[i]
            jobs.append(
                lambda a=agent, p=provider, f=fields, im=images, i=i: safe_review(
                    a, f, p, im, row=i, round_id=rnd.round_id
                )
            )
            keys.append((name, i))
    logger.info("round %s: %d rows in scope, %d calls", rnd.round_id, len(scope), len(jobs))
    results: list[ItemResult] = await run_bounded(jobs, max_concurrency)

    by_key = dict(zip(keys, results))
    new_columns: dict[str, list] = {}
    for name in rnd.reviewers:
        field_names = output_schema_for(agents[name]).names
        for f in field_names + [OUTPUT_FIELD]:
            new_columns[make_column_name(rnd.round_id, name, f)] = [None] * len(table)
        for i in scope:
            result = by_key[(name, i)]
            if result.failed:
                failures.append(result.failure)
                continue
            output = result.output
            for f in field_names:
                new_columns[make_column_name(rnd.round_id, name, f)][i] = output.cell(f)
            new_columns[make_column_name(rnd.round_id, name, OUTPUT_FIELD)][i] = output.to_json()
            usage = result.review.usage
            ledger.add(
                LedgerEntry(name, rnd.round_id, i, usage.input_tokens, usage.output_tokens, result.cost)
            )

    stats = RoundStats(
        rnd.round_id,
        rows_considered=len(table),
        rows_passed_filter=len(passed),
        rows_skipped_null_inputs=len(passed) - len(scope),
        calls=len(jobs),
        failures=failures,
    )
    return append_columns(table, new_columns), stats


def run_workflow(
    schema: WorkflowSchema,
    table: ReviewTable,
    agents: Mapping[str, AgentSpec],
    providers: Mapping[str, ProviderLike],
    *,
    environment: Mapping[str, str] | None = None,
) -> RunReport:
    """Blocking wrapper around :func:`arun_workflow`."""
    return asyncio.run(arun_workflow(schema, table, agents, providers, environment=environment))
