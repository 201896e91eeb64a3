from __future__ import annotations

import json
from pathlib import Path

import pytest

from reviewflow.agents import AgentSpec, ScoringSpec, TitleAbstractSpec
from reviewflow.providers import MockBackend, MockScript, Provider, ProviderConfig

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "tests" / "fixtures"
CONFIGS = ROOT / "configs"


def mock_config(script: MockScript, *, name: str = "mock", **kwargs) -> ProviderConfig:
    kwargs.setdefault("backoff", 0.0)
    return ProviderConfig(name=name, kind="mock", script=script, **kwargs)


def mock_provider(script: MockScript | dict, **kwargs) -> Provider:
    if isinstance(script, dict):
        script = MockScript.from_dict(script)
    config = mock_config(script, **kwargs)
    return Provider(config, MockBackend(script))


def scoring_agent(name: str = "Scorer", provider: str = "mock", **kwargs) -> AgentSpec:
    spec = ScoringSpec("Rate how relevant the item is to radiology.", (1, 2, 3, 4, 5), "5 means highly relevant.")
    return AgentSpec(name=name, provider=provider, kind="scoring", spec=spec, **kwargs)


def screening_agent(name: str, provider: str = "mock", **kwargs) -> AgentSpec:
    spec = TitleAbstractSpec("The study evaluates an imaging model.", "Editorials.")
    return AgentSpec(name=name, provider=provider, kind="title_abstract", spec=spec, **kwargs)


def payload(**fields) -> str:
    return json.dumps(fields)


@pytest.fixture
def screening_config_path() -> Path:
    return CONFIGS / "screening.toml"


@pytest.fixture
def articles_path() -> Path:
    return CONFIGS / "articles.csv"


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
