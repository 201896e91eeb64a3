"""Built-in prompt templates.

Each reviewer kind renders a fixed sequence of sections joined by blank lines.
A section whose placeholders all render empty is dropped, which is how the
examples and additional-context blocks disappear when unused. Changing any
text here changes every prompt, so bump ``PROMPT_VERSION`` and regenerate the
prompt fixtures under ``tests/fixtures/prompts``.
"""

from __future__ import annotations

import re
from collections.abc import Mapping

from .errors import UnresolvedPlaceholderError

PROMPT_VERSION = "1"

PLACEHOLDER_RE = re.compile(r"\$\{([^{}]*)\}")

ROLE = "You are ${name}, ${backstory}."
ROLE_NO_BACKSTORY = "You are ${name}, a reviewer."

REASONING_DIRECTIVES = {
    "brief": "Reasoning: reason in 1-2 sentences, briefly explaining your decision.",
    "cot": (
        "Reasoning: think step by step. Give a detailed chain-of-thought explanation "
        "that walks through each relevant consideration before reaching your decision."
    ),
}

CERTAINTY = (
    "Certainty: report how certain you are of your judgment as an integer from "
    "0 (a pure guess) to 100 (completely certain)."
)

SCORING_TASK = """Your task is to review the input item and assign it a score.

Task:
${scoring_task}

Allowed scores: ${scoring_set}

Scoring rules:
${scoring_rules}"""

TITLE_ABSTRACT_TASK = """Your task is to screen the input item (typically the title and abstract of an article) for a systematic review. Check whether it meets all of the inclusion criteria and none of the exclusion criteria.

Inclusion criteria:
${inclusion_criteria}

Exclusion criteria:
${exclusion_criteria}

Evaluate the item on this scale:
1: Absolutely exclude.
2: Better to exclude.
3: Not sure (ambiguous).
4: Better to include.
5: Absolutely include."""

ABSTRACTION_TASK = """Your task is to extract structured information from the input item. Extract a value for each key below, following its instructions.

Keys:
${abstraction_keys}"""

EXAMPLES = """Examples:
${examples}"""

ITEM = """Input item:
${item}"""

CONTEXT = """Additional context:
${additional_context}"""

OUTPUT = """Output format: return only a JSON object with exactly these fields:
${schema}
Do not write anything outside the JSON object."""


def placeholders(template: str) -> list[str]:
    return PLACEHOLDER_RE.findall(template)


def render(template: str, variables: Mapping[str, str]) -> str:
    """Substitute ``${name}`` placeholders.

    Raises:
        UnresolvedPlaceholderError: a placeholder has no value in ``variables``.
    """

    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in variables:
            raise UnresolvedPlaceholderError(f"unresolved placeholder ${{{name}}}")
        return variables[name]

    return PLACEHOLDER_RE.sub(sub, template)


def render_section(template: str, variables: Mapping[str, str]) -> str:
    """Render ``template``; empty if every placeholder in it rendered empty."""
    names = placeholders(template)
    if names and not any(variables.get(n) for n in names):
        return ""
    return render(template, variables)
