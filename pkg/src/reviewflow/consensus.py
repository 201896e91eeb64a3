"""Junior/senior consensus and threshold strategies.

Two junior reviewers score each item on a 1-5 scale. If they disagree, or
both pick the neutral score, a senior reviewer's score is final; otherwise
the final score is the juniors' mean. Threshold strategies then turn the
final score into an include/exclude decision.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal

from .errors import (
    ColumnMissingError,
    MissingSeniorError,
    NonNumericCellError,
    ReviewFlowError,
    ScoreRangeError,
)
from .filters import parse_decimal
from .model import Failure, ReviewTable, append_columns

SCORE_MIN, SCORE_MAX = 1, 5
DEFAULT_NEUTRAL_SCORE = 3
_ONE_PLACE = Decimal("0.1")

INCLUDE, EXCLUDE = "include", "exclude"


@dataclass(frozen=True)
class ThresholdStrategy:
    name: str
    threshold: Decimal

    def __post_init__(self) -> None:
        object.__setattr__(self, "threshold", Decimal(str(self.threshold)))
        if not (1 < self.threshold <= 5):
            raise ReviewFlowError(f"threshold {self.threshold} outside (1, 5]")


SENSITIVE = ThresholdStrategy("sensitive", Decimal("1.5"))
BALANCED = ThresholdStrategy("balanced", Decimal("3.0"))
SPECIFIC = ThresholdStrategy("specific", Decimal("4.5"))
STRATEGIES = (SENSITIVE, BALANCED, SPECIFIC)


def strategies_for(thresholds: list[Decimal]) -> list[ThresholdStrategy]:
    """Name thresholds after the standard strategies when they match one."""
    named = {s.threshold: s for s in STRATEGIES}
    out = []
    for t in thresholds:
        t = Decimal(str(t))
        out.append(named.get(t) or ThresholdStrategy(f"t={t}", t))
    return out


def _check(score: int, what: str = "score") -> None:
    if isinstance(score, bool) or not isinstance(score, int) or not SCORE_MIN <= score <= SCORE_MAX:
        raise ScoreRangeError(f"{what} {score!r} is not an integer in {SCORE_MIN}..{SCORE_MAX}")


def needs_senior(s1: int, s2: int, neutral_score: int = DEFAULT_NEUTRAL_SCORE) -> bool:
    _check(s1)
    _check(s2)
    return s1 != s2 or (s1 == neutral_score and s2 == neutral_score)


def final_score(
    s1: int, s2: int, senior: int | None, neutral_score: int = DEFAULT_NEUTRAL_SCORE
) -> Decimal:
    """Consensus score with one decimal place.

    Raises:
        MissingSeniorError: escalation is required but ``senior`` is None.
        ScoreRangeError: any score outside 1..5.
    """
    if needs_senior(s1, s2, neutral_score):
        if senior is None:
            raise MissingSeniorError(f"juniors scored ({s1}, {s2}) but no senior score is available")
        _check(senior, "senior score")
        return Decimal(senior).quantize(_ONE_PLACE)
    return (Decimal(s1 + s2) / 2).quantize(_ONE_PLACE)


def classify(score: Decimal, strategy: ThresholdStrategy) -> str:
    return INCLUDE if Decimal(score) >= strategy.threshold else EXCLUDE


@dataclass(frozen=True)
class ConsensusConfig:
    junior_columns: tuple[str, str]
    senior_column: str
    output_column: str = "final_score"
    neutral_score: int = DEFAULT_NEUTRAL_SCORE

    def __post_init__(self) -> None:
        if len(self.junior_columns) != 2:
            raise ReviewFlowError("consensus needs exactly two junior columns")
        cols = [*self.junior_columns, self.senior_column]
        if len(set(cols)) != 3:
            raise ReviewFlowError("junior and senior columns must be distinct")


def _int_cell(value: str, row: int, column: str) -> int:
    number = parse_decimal(value)
    if number is None or number != number.to_integral_value():
        raise NonNumericCellError(f"row {row}, column {column!r}: {value!r} is not an integer score")
    return int(number)


@dataclass(frozen=True)
class ConsensusResult:
    table: ReviewTable
    failures: list[Failure]


def apply_consensus(table: ReviewTable, config: ConsensusConfig) -> ConsensusResult:
    """Append ``config.output_column`` with the final score of every row.

    Rows that cannot be scored (escalation without a senior score, or a null
    junior score) get a null cell and a failure record.

    Raises:
        ColumnMissingError: an input column does not exist.
        NonNumericCellError: a non-null score cell is not an integer.
    """
    for col in (*config.junior_columns, config.senior_column):
        if col not in table.columns:
            raise ColumnMissingError(f"no column {col!r}")
    j1, j2 = (table.column(c) for c in config.junior_columns)
    seniors = table.column(config.senior_column)
    out: list[str | None] = []
    failures: list[Failure] = []
    for i, (a, b, s) in enumerate(zip(j1, j2, seniors)):
        if a is None or b is None:
            failures.append(Failure(None, None, i, "missing_junior", f"row {i}: a junior score is null"))
            out.append(None)
            continue
        s1 = _int_cell(a, i, config.junior_columns[0])
        s2 = _int_cell(b, i, config.junior_columns[1])
        senior = None if s is None or s == "" else _int_cell(s, i, config.senior_column)
        try:
            out.append(str(final_score(s1, s2, senior, config.neutral_score)))
        except (MissingSeniorError, ScoreRangeError) as exc:
            failures.append(Failure(None, None, i, exc.code, f"row {i}: {exc}"))
            out.append(None)
    return ConsensusResult(append_columns(table, {config.output_column: out}), failures)
