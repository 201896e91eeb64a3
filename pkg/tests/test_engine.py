from __future__ import annotations

import asyncio
import pytest

from reviewflow.engine import WorkflowValidationError, arun_workflow, rows_in_scope, run_workflow, validate_schema
from reviewflow.filters import parse_filter
from reviewflow.model import ReviewTable, RoundSpec, WorkflowSchema
from reviewflow.providers import MockBackend, MockScript, Price, Provider

from conftest import mock_config, screening_agent

DISAGREE = "round-A_Alice_evaluation != round-A_Bob_evaluation"


def _agents():
    return {n: screening_agent(n) for n in ("Alice", "Bob", "Carol")}


def _schema(max_concurrency=10, filter_source=DISAGREE):
    return WorkflowSchema(
        (
            RoundSpec("A", ("Alice", "Bob"), ("title", "abstract")),
            RoundSpec(
                "B",
                ("Carol",),
                ("title", "abstract", "round-A_Alice_output", "round-A_Bob_output"),
                filter=parse_filter(filter_source),
            ),
        ),
        max_concurrency,
    )


def _answer(evaluation, reasoning="r"):
    return {"reasoning": reasoning, "evaluation": evaluation, "certainty": 70}


def _table(n):
    return ReviewTable.from_columns({"title": [f"t{i}" for i in range(n)], "abstract": [f"a{i}" for i in range(n)]})


def _providers(script_dict, **kwargs):
    script = MockScript.from_dict(script_dict)
    return {"mock": mock_config(script, **kwargs)}


FOUR_ROWS = {
    "responses": {
        "Alice": {str(i): _answer(e) for i, e in enumerate([4, 2, 5, 1])},
        "Bob": {str(i): _answer(e) for i, e in enumerate([4, 3, 5, 4])},
        "Carol": {"*": _answer(3, "senior")},
    }
}


def test_validate_figure_two_schema_ok():
    assert validate_schema(_schema(), ["title", "abstract"], _agents(), {"mock": object()}) == []


def test_self_reference_is_unknown_column():
    schema = WorkflowSchema((RoundSpec("A", ("Alice",), ("title", "round-A_Alice_output")),))
    issues = validate_schema(schema, ["title"], _agents(), {"mock": 1})
    assert [(i.code, i.round_id) for i in issues] == [("unknown_column", "A")]


def test_filter_on_later_round_column():
    schema = WorkflowSchema(
        (
            RoundSpec("A", ("Alice",), ("title",), filter=parse_filter("round-B_Bob_evaluation > 2")),
            RoundSpec("B", ("Bob",), ("title",)),
        )
    )
    issues = validate_schema(schema, ["title"], _agents(), {"mock": 1})
    assert [i.code for i in issues] == ["unknown_column"]


def test_validate_collects_every_issue():
    schema = WorkflowSchema(
        (
            RoundSpec("A", ("Alice", "Nobody"), ("title",)),
            RoundSpec("A", ("Bob",), ("missing",)),
        )
    )
    agents = dict(_agents(), Bob=screening_agent("Bob", provider="elsewhere"))
    codes = sorted(i.code for i in validate_schema(schema, ["title"], agents, {"mock": 1}))
    assert codes == ["duplicate_round", "unknown_agent", "unknown_column", "unknown_provider"]


def test_validation_is_monotone_in_columns():
    base = ["title", "abstract"]
    assert validate_schema(_schema(), base + ["extra", "more"], _agents(), {"mock": 1}) == []


def test_rows_in_scope_examples():
    table = ReviewTable.from_columns({"a": ["3", "3", None], "b": ["4", "3", "1"]})
    assert rows_in_scope(RoundSpec("A", ("x",), ("a",)), _table(5)) == [0, 1, 2, 3, 4]
    assert rows_in_scope(RoundSpec("A", ("x",), ("a",), filter=parse_filter("a != b")), table) == [0]


def test_rows_in_scope_records_filter_errors():
    table = ReviewTable.from_columns({"a": ["abc", "5"]})
    failures = []
    spec = RoundSpec("A", ("x",), ("a",), filter=parse_filter("a > 1"))
    assert rows_in_scope(spec, table, failures) == [1]
    assert [(f.row, f.code) for f in failures] == [(0, "type_error")]


def test_disagreement_rows_reach_round_b():
    report = run_workflow(_schema(), _table(4), _agents(), _providers(FOUR_ROWS))
    carol = report.table.column("round-B_Carol_evaluation")
    assert [c is not None for c in carol] == [False, True, False, True]
    assert report.rounds[1].rows_passed_filter == 2
    assert report.rounds[0].calls == 8 and report.rounds[1].calls == 2
    assert report.failures == []


def test_output_column_layout():
    schema = WorkflowSchema((RoundSpec("A", ("Alice",), ("title",)),))
    report = run_workflow(schema, _table(2), _agents(), _providers({"default": _answer(4)}))
    new = report.table.columns[2:]
    assert new == (
        "round-A_Alice_reasoning",
        "round-A_Alice_evaluation",
        "round-A_Alice_certainty",
        "round-A_Alice_output",
    )
    assert len(report.table) == 2
    assert report.table.column("round-A_Alice_output")[0] == '{"certainty":70,"evaluation":4,"reasoning":"r"}'


def test_zero_row_table():
    report = run_workflow(_schema(), _table(0), _agents(), _providers(FOUR_ROWS))
    assert len(report.table) == 0
    assert len(report.table.columns) == 2 + 3 * 4
    assert report.ledger.total == 0


def test_base_columns_untouched():
    table = _table(4)
    report = run_workflow(_schema(), table, _agents(), _providers(FOUR_ROWS))
    for col in table.columns:
        assert report.table.column(col) == table.column(col)


def test_failed_call_leaves_nulls_and_flows_on():
    script = dict(FOUR_ROWS, failures={"Bob": {"1": {"always": True}}})
    report = run_workflow(_schema(), _table(4), _agents(), _providers(script, max_retries=1))
    assert [(f.round_id, f.agent, f.row, f.code) for f in report.failures] == [("A", "Bob", 1, "schema_violation")]
    assert report.table.column("round-A_Bob_evaluation")[1] is None
    assert report.table.column("round-A_Bob_output")[1] is None
    # null absorption drops row 1 from round B; row 3 still disagrees
    assert [c is not None for c in report.table.column("round-B_Carol_evaluation")] == [False, False, False, True]
    assert len(report.ledger.entries) == 7 + 1


def test_chained_null_inputs_are_skipped():
    schema = WorkflowSchema(
        (
            RoundSpec("A", ("Alice",), ("title",)),
            RoundSpec("B", ("Carol",), ("round-A_Alice_output",)),
        )
    )
    script = {"default": _answer(3), "failures": {"Alice": {"0": {"always": True}}}}
    report = run_workflow(schema, _table(2), _agents(), _providers(script, max_retries=0))
    assert report.rounds[1].rows_skipped_null_inputs == 1
    assert report.table.column("round-B_Carol_evaluation") == [None, "3"]


def test_validation_error_aborts():
    schema = WorkflowSchema((RoundSpec("A", ("Alice",), ("nope",)),))
    with pytest.raises(WorkflowValidationError) as info:
        run_workflow(schema, _table(1), _agents(), _providers(FOUR_ROWS))
    assert info.value.issues[0].code == "unknown_column"


def test_ledger_and_round_sums():
    providers = _providers(FOUR_ROWS, price=Price.of("0.000001", "0.000002"))
    report = run_workflow(_schema(), _table(4), _agents(), providers)
    assert report.ledger.total > 0
    assert sum(report.ledger.total_by_round().values()) == report.ledger.total
    assert sum(report.ledger.total_by_agent().values()) == report.ledger.total
    assert [(e.agent, e.row) for e in report.ledger.entries][:4] == [("Alice", 0), ("Alice", 1), ("Alice", 2), ("Alice", 3)]


def test_determinism_across_concurrency():
    results = [
        run_workflow(_schema(c), _table(4), _agents(), _providers(FOUR_ROWS, price=Price.of("1e-6", "2e-6")))
        for c in (1, 3, 50)
    ]
    assert all(r.table == results[0].table for r in results)
    assert all(r.to_dict() == results[0].to_dict() for r in results)


class InFlight:
    def __init__(self, inner):
        self.inner = inner
        self.now = 0
        self.peak = 0

    async def complete(self, request, attempt):
        self.now += 1
        self.peak = max(self.peak, self.now)
        await asyncio.sleep(0.001 * (request.row % 3))
        try:
            return await self.inner.complete(request, attempt)
        finally:
            self.now -= 1

    async def aclose(self):
        pass


def test_pool_is_shared_by_all_agents_of_a_round():
    script = MockScript.from_dict({"default": _answer(4)})
    backend = InFlight(MockBackend(script))
    provider = Provider(mock_config(script), backend)
    schema = WorkflowSchema((RoundSpec("A", ("Alice", "Bob"), ("title",)),), max_concurrency=5)
    report = asyncio.run(arun_workflow(schema, _table(40), _agents(), {"mock": provider}))
    assert backend.peak == 5
    assert report.rounds[0].calls == 80


def test_missing_credential_fails_before_any_call():
    from reviewflow.errors import AuthMissingError
    from reviewflow.providers import ProviderConfig

    live = {"mock": ProviderConfig(name="mock", kind="openai_compatible", model="gpt-4o-mini")}
    with pytest.raises(AuthMissingError):
        run_workflow(_schema(), _table(1), _agents(), live, environment={})
