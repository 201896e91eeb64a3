"""Shared data model: review tables, workflow schemas, outputs and cost ledgers."""

from __future__ import annotations

import json
import re
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from decimal import Decimal
from typing import TYPE_CHECKING, Union

from .errors import ColumnMissingError, DuplicateColumnError, LengthMismatchError, ReviewFlowError

if TYPE_CHECKING:
    from .filters import FilterExpr

Cell = Union[str, None]
OutputValue = Union[str, int, list]

COLUMN_RE = re.compile(r"^[A-Za-z0-9_.-]+$")
IDENT_RE = re.compile(r"^[A-Za-z0-9_-]+$")
ROUND_ID_RE = re.compile(r"^[A-Za-z0-9]+$")

DEFAULT_MAX_CONCURRENCY = 10


def make_column_name(round_id: str, agent_name: str, field: str) -> str:
    """Name of the column holding ``field`` of ``agent_name``'s output in a round."""
    return f"round-{round_id}_{agent_name}_{field}"


def canonical_json(value: object) -> str:
    """Sorted keys, no insignificant whitespace, UTF-8 kept as is."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class ReviewTable:
    """Ordered rows of string cells. ``None`` marks a cell that was never produced."""

    columns: tuple[str, ...]
    data: tuple[tuple[Cell, ...], ...] = ()

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for name in self.columns:
            if not isinstance(name, str) or not name:
                raise ReviewFlowError(f"invalid column name {name!r}")
            if name in seen:
                raise DuplicateColumnError(f"duplicate column {name!r}")
            seen.add(name)
        width = len(self.columns)
        for i, row in enumerate(self.data):
            if len(row) != width:
                raise LengthMismatchError(f"row {i} has {len(row)} cells, expected {width}")
            for cell in row:
                if cell is not None and not isinstance(cell, str):
                    raise ReviewFlowError(f"row {i}: cells must be str or None, got {type(cell).__name__}")

    @classmethod
    def from_rows(cls, columns: Sequence[str], rows: Iterable[Mapping[str, Cell]]) -> ReviewTable:
        cols = tuple(columns)
        data = []
        for i, row in enumerate(rows):
            extra = set(row) - set(cols)
            if extra:
                raise ColumnMissingError(f"row {i} has unknown columns {sorted(extra)}")
            data.append(tuple(row.get(c) for c in cols))
        return cls(cols, tuple(data))

    @classmethod
    def from_columns(cls, columns: Mapping[str, Sequence[Cell]]) -> ReviewTable:
        names = tuple(columns)
        lengths = {len(v) for v in columns.values()}
        if len(lengths) > 1:
            raise LengthMismatchError(f"column lengths differ: {sorted(lengths)}")
        n = lengths.pop() if lengths else 0
        return cls(names, tuple(tuple(columns[c][i] for c in names) for i in range(n)))

    def __len__(self) -> int:
        return len(self.data)

    def index(self, column: str) -> int:
        try:
            return self.columns.index(column)
        except ValueError:
            raise ColumnMissingError(f"no column {column!r}") from None

    def column(self, name: str) -> list[Cell]:
        j = self.index(name)
        return [row[j] for row in self.data]

    def row(self, i: int) -> dict[str, Cell]:
        return dict(zip(self.columns, self.data[i]))

    def rows(self) -> Iterator[dict[str, Cell]]:
        for i in range(len(self.data)):
            yield self.row(i)

    def append_columns(self, new_columns: Mapping[str, Sequence[Cell]]) -> ReviewTable:
        return append_columns(self, new_columns)


def append_columns(table: ReviewTable, new_columns: Mapping[str, Sequence[Cell]]) -> ReviewTable:
    """Return a new table with ``new_columns`` added on the right.

    Raises:
        DuplicateColumnError: a new name already exists in the table.
        LengthMismatchError: a value vector does not have one cell per row.
    """
    existing = set(table.columns)
    for name, values in new_columns.items():
        if name in existing:
            raise DuplicateColumnError(f"column {name!r} already exists")
        if len(values) != len(table):
            raise LengthMismatchError(
                f"column {name!r} has {len(values)} values for {len(table)} rows"
            )
    names = list(new_columns)
    data = tuple(
        row + tuple(new_columns[name][i] for name in names) for i, row in enumerate(table.data)
    )
    return ReviewTable(table.columns + tuple(names), data)


@dataclass(frozen=True)
class RoundSpec:
    round_id: str
    reviewers: tuple[str, ...]
    text_inputs: tuple[str, ...]
    image_inputs: tuple[str, ...] = ()
    filter: FilterExpr | None = None

    def __post_init__(self) -> None:
        if not ROUND_ID_RE.match(self.round_id or ""):
            raise ReviewFlowError(f"round id {self.round_id!r} must match [A-Za-z0-9]+")
        if not self.reviewers:
            raise ReviewFlowError(f"round {self.round_id}: no reviewers")
        if len(set(self.reviewers)) != len(self.reviewers):
            raise ReviewFlowError(f"round {self.round_id}: duplicate reviewer names")
        if not self.text_inputs:
            raise ReviewFlowError(f"round {self.round_id}: no text inputs")


@dataclass(frozen=True)
class WorkflowSchema:
    rounds: tuple[RoundSpec, ...]
    max_concurrency: int = DEFAULT_MAX_CONCURRENCY

    def __post_init__(self) -> None:
        if self.max_concurrency < 1:
            raise ReviewFlowError("max_concurrency must be a positive integer")


@dataclass(frozen=True)
class ReviewOutput:
    """One agent's validated structured answer for one item."""

    fields: dict[str, OutputValue]

    def __getitem__(self, key: str) -> OutputValue:
        return self.fields[key]

    def to_json(self) -> str:
        return canonical_json(self.fields)

    def cell(self, key: str) -> str:
        """Render one field as a table cell."""
        value = self.fields[key]
        if isinstance(value, str):
            return value
        if isinstance(value, list):
            return canonical_json(value)
        return str(value)


@dataclass(frozen=True)
class LedgerEntry:
    agent: str
    round_id: str | None
    row: int
    input_tokens: int
    output_tokens: int
    cost: Decimal


def _money(value: Decimal) -> str:
    return format(value, "f")


@dataclass
class CostLedger:
    entries: list[LedgerEntry] = field(default_factory=list)

    def add(self, entry: LedgerEntry) -> None:
        if entry.input_tokens < 0 or entry.output_tokens < 0:
            raise ReviewFlowError("token counts must be nonnegative")
        self.entries.append(entry)

    @property
    def total(self) -> Decimal:
        return sum((e.cost for e in self.entries), Decimal(0))

    def total_by_agent(self) -> dict[str, Decimal]:
        out: dict[str, Decimal] = {}
        for e in self.entries:
            out[e.agent] = out.get(e.agent, Decimal(0)) + e.cost
        return out

    def total_by_round(self) -> dict[str | None, Decimal]:
        out: dict[str | None, Decimal] = {}
        for e in self.entries:
            out[e.round_id] = out.get(e.round_id, Decimal(0)) + e.cost
        return out

    def to_dict(self) -> dict:
        return {
            "entries": [
                {
                    "agent": e.agent,
                    "round": e.round_id,
                    "row": e.row,
                    "input_tokens": e.input_tokens,
                    "output_tokens": e.output_tokens,
                    "cost": _money(e.cost),
                }
                for e in self.entries
            ],
            "total": _money(self.total),
            "by_agent": {k: _money(v) for k, v in sorted(self.total_by_agent().items())},
            "by_round": {str(k): _money(v) for k, v in self.total_by_round().items()},
        }


@dataclass(frozen=True)
class Failure:
    """A per-row failure; recorded instead of aborting the surrounding run."""

    round_id: str | None
    agent: str | None
    row: int
    code: str
    message: str

    def to_dict(self) -> dict:
        return {
            "round": self.round_id,
            "agent": self.agent,
            "row": self.row,
            "code": self.code,
            "message": self.message,
        }
