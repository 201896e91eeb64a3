from __future__ import annotations

import asyncio
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reviewflow.agents import (
    AbstractionSpec,
    AgentSpec,
    ContextSource,
    CustomSpec,
    ScoringSpec,
    TitleAbstractSpec,
    build_prompt,
    output_schema_for,
    review_item,
    review_items,
    run_bounded,
    validate_images,
)
from reviewflow.errors import ContextLookupError, ReviewFlowError, SchemaViolationError, UnresolvedPlaceholderError
from reviewflow.providers import FieldKind, OutputSchema, Provider, RawCompletion

from conftest import mock_provider, scoring_agent, screening_agent
from prompt_cases import PROMPTS, render_all


@pytest.mark.parametrize("name", sorted(render_all()))
def test_prompts_match_golden_files(name):
    expected = (PROMPTS / f"{name}.txt").read_text(encoding="utf-8")
    assert render_all()[name] == expected


def test_output_schemas():
    assert output_schema_for(scoring_agent()).fields["score"] == FieldKind.integer_in_set([1, 2, 3, 4, 5])
    ta = output_schema_for(screening_agent("Alice"))
    assert ta.names == ["reasoning", "evaluation", "certainty"]
    assert ta.fields["evaluation"] == FieldKind.integer_in_range(1, 5)
    abstraction = AgentSpec(
        name="X", provider="p", kind="abstraction",
        spec=AbstractionSpec({"complications": "list_of_text"}, {"complications": "List them."}),
    )
    assert output_schema_for(abstraction).fields == {"complications": FieldKind.list_of_text()}


def test_reasoning_defaults_and_rules():
    assert scoring_agent().reasoning == "brief"
    with pytest.raises(ReviewFlowError):
        scoring_agent(reasoning="long")
    with pytest.raises(ReviewFlowError):
        AgentSpec(
            name="X", provider="p", kind="abstraction", reasoning="brief",
            spec=AbstractionSpec({"k": "text"}, {"k": "d"}),
        )


def test_kind_spec_invariants():
    assert ScoringSpec("t", (3, 1, 2)).scoring_set == (1, 2, 3)
    with pytest.raises(ReviewFlowError):
        ScoringSpec("t", (1, 1))
    with pytest.raises(ReviewFlowError):
        ScoringSpec("t", ())
    with pytest.raises(ReviewFlowError):
        TitleAbstractSpec("  ")
    with pytest.raises(ReviewFlowError):
        AbstractionSpec({"k": "text"}, {})
    with pytest.raises(ReviewFlowError):
        AgentSpec(name="bad name", provider="p", kind="scoring", spec=ScoringSpec("t", (1,)))


def _custom(template: str, **variables) -> AgentSpec:
    return AgentSpec(
        name="C", provider="p", kind="custom",
        spec=CustomSpec(template, OutputSchema({"x": FieldKind.text()}), variables=variables),
    )


def test_custom_template_substitution():
    prompt = build_prompt(_custom("Review: ${item}"), {"title": "X"})
    assert "Review: title: X" in prompt
    assert '- "x": string' in prompt


def test_custom_template_undeclared_placeholder():
    with pytest.raises(UnresolvedPlaceholderError):
        _custom("Review: ${item} ${undeclared}")


def test_title_abstract_prompt_contains_criteria_verbatim():
    spec = TitleAbstractSpec("Must study deep learning\non CT images.", "Animal studies.")
    agent = AgentSpec(name="A", provider="p", kind="title_abstract", spec=spec)
    prompt = build_prompt(agent, {"title": "t"})
    assert "Must study deep learning\non CT images." in prompt
    assert "Animal studies." in prompt
    assert "reason in 1-2 sentences" in prompt


def test_null_cells_render_empty():
    prompt = build_prompt(scoring_agent(), {"title": "t", "abstract": None})
    assert "title: t\nabstract: \n" in prompt


@given(st.text(min_size=1).filter(lambda s: s.strip() and "${" not in s))
def test_context_never_removes_sections(context):
    agent = screening_agent("Alice", examples=(("in", "out"),))
    item = {"title": "t", "abstract": "a"}
    without = build_prompt(agent, item, "")
    with_ctx = build_prompt(agent, item, context)
    for section in without.split("\n\n"):
        assert section in with_ctx
    assert context in with_ctx


def test_validate_images(tmp_path):
    png = tmp_path / "fig1.png"
    png.write_bytes(b"x")
    bmp = tmp_path / "fig1.bmp"
    bmp.write_bytes(b"x")
    assert validate_images([str(png)]) == []
    assert [i.code for i in validate_images([str(bmp)])] == ["bad_extension"]
    assert [i.code for i in validate_images([str(tmp_path / "gone.png")])] == ["missing_file"]
    issues = validate_images([str(bmp), str(tmp_path / "gone.gif"), str(tmp_path / "gone.txt")])
    assert [(i.path.rsplit("/", 1)[1], i.code) for i in issues] == [
        ("fig1.bmp", "bad_extension"),
        ("gone.gif", "missing_file"),
        ("gone.txt", "bad_extension"),
        ("gone.txt", "missing_file"),
    ]


def _review(agent, provider, item=None, images=()):
    return asyncio.run(review_item(agent, item or {"title": "t"}, provider, images, row=0))


def test_review_item_passthrough():
    provider = mock_provider({"default": '{"reasoning":"r","score":5,"certainty":90}'})
    review = _review(scoring_agent(), provider)
    assert review.output["score"] == 5
    assert review.usage.retries_used == 0


def test_review_item_out_of_set_score():
    provider = mock_provider({"default": '{"reasoning":"r","score":7,"certainty":90}'}, max_retries=1)
    with pytest.raises(SchemaViolationError):
        _review(scoring_agent(), provider)


class PromptRecorder:
    def __init__(self, text):
        self.text = text
        self.prompts = []

    async def complete(self, request, attempt):
        self.prompts.append(request.prompt)
        return RawCompletion(self.text, 1, 1)

    async def aclose(self):
        pass


def test_dynamic_context_reaches_prompt():
    seen = []

    def lookup(text):
        seen.append(text)
        return "extra facts"

    backend = PromptRecorder('{"reasoning":"r","score":5,"certainty":90}')
    provider = Provider(mock_provider({"default": "x"}).config, backend)
    agent = scoring_agent(additional_context=ContextSource(lookup=lookup))
    _review(agent, provider, {"title": "Lung CT"})
    assert seen == ["title: Lung CT"]
    assert "Additional context:\nextra facts" in backend.prompts[0]


def test_context_lookup_strictness():
    def broken(_):
        raise KeyError("nope")

    provider = mock_provider({"default": '{"reasoning":"r","score":5,"certainty":90}'})
    lenient = scoring_agent(additional_context=ContextSource(lookup=broken))
    assert _review(lenient, provider).output["score"] == 5
    strict = scoring_agent(additional_context=ContextSource(lookup=broken, strict=True))
    with pytest.raises(ContextLookupError):
        _review(strict, provider)


def test_review_item_rejects_bad_images(tmp_path):
    provider = mock_provider({"default": '{"reasoning":"r","score":5,"certainty":90}'})
    with pytest.raises(ReviewFlowError, match="invalid images"):
        _review(scoring_agent(), provider, images=[str(tmp_path / "none.png")])


def _by_row_script(n):
    return {
        "responses": {
            "Scorer": {str(i): {"reasoning": f"row {i}", "score": i % 5 + 1, "certainty": 50} for i in range(n)}
        }
    }


def test_review_items_keeps_order_and_sums_cost():
    provider = mock_provider(_by_row_script(3), price=None)
    results, total = asyncio.run(review_items(scoring_agent(), [{"t": str(i)} for i in range(3)], provider))
    assert [r.output["score"] for r in results] == [1, 2, 3]
    assert total == 0


def test_review_items_isolates_failures():
    script = _by_row_script(3)
    script["failures"] = {"Scorer": {"1": {"always": True}}}
    provider = mock_provider(script, max_retries=1)
    results, _ = asyncio.run(review_items(scoring_agent(), [{"t": "a"}, {"t": "b"}, {"t": "c"}], provider))
    assert [r.failed for r in results] == [False, True, False]
    assert results[1].failure.code == "schema_violation"
    assert results[1].failure.row == 1


def test_all_failed_batch_is_returned():
    provider = mock_provider({"default": "nope"}, max_retries=0)
    results, total = asyncio.run(review_items(scoring_agent(), [{"t": "a"}, {"t": "b"}], provider))
    assert all(r.failed for r in results)
    assert total == 0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=0, max_size=30), st.integers(1, 8))
def test_alignment_under_random_delays(delays, limit):
    async def job(i, d):
        await asyncio.sleep(d / 1000)
        return i

    jobs = [lambda i=i, d=d: job(i, d) for i, d in enumerate(delays)]
    assert asyncio.run(run_bounded(jobs, limit)) == list(range(len(delays)))


def test_run_bounded_respects_limit():
    state = {"now": 0, "peak": 0}
    rng = random.Random(1)

    async def job():
        state["now"] += 1
        state["peak"] = max(state["peak"], state["now"])
        await asyncio.sleep(rng.random() / 1000)
        state["now"] -= 1

    asyncio.run(run_bounded([job] * 200, 7))
    assert state["peak"] == 7


@settings(max_examples=100)
@given(st.integers(1, 5), st.integers(0, 100), st.text(min_size=1).filter(str.strip))
def test_accepted_title_abstract_outputs_stay_in_domain(evaluation, certainty, reasoning):
    raw = json.dumps({"reasoning": reasoning, "evaluation": evaluation, "certainty": certainty})
    provider = mock_provider({"default": raw})
    review = _review(screening_agent("Alice"), provider)
    assert review.output["evaluation"] in {1, 2, 3, 4, 5}
    assert review.output["reasoning"].strip()
