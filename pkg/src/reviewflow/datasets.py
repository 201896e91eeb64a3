"""CSV and JSONL datasets.

CSV follows RFC 4180 (CRLF records, minimal quoting). Null cells are written
as the bare sentinel ``\\N``; consequently a cell whose text is literally
``\\N`` cannot be stored in CSV and is rejected on write.

JSONL holds one flat object per line. Null cells are omitted, except on the
first line, which lists every column so that column order (and columns that
are entirely null) survive a round trip.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import DatasetError
from .model import COLUMN_RE, Cell, ReviewTable

NULL_SENTINEL = "\\N"
FORMATS = ("csv", "jsonl")


@dataclass(frozen=True)
class Dataset:
    table: ReviewTable
    format: str


def infer_format(path: str | Path, format: str | None = None) -> str:
    if format:
        if format not in FORMATS:
            raise DatasetError(f"unknown format {format!r}; expected csv or jsonl")
        return format
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix in (".jsonl", ".ndjson"):
        return "jsonl"
    raise DatasetError(f"cannot infer format of {str(path)!r}; pass csv or jsonl explicitly")


def _check_header(names: list[str], line: int) -> None:
    seen = set()
    for name in names:
        if not COLUMN_RE.match(name):
            raise DatasetError(f"invalid column name {name!r} (allowed: letters, digits, _ . -)", line)
        if name in seen:
            raise DatasetError(f"duplicate header {name!r}", line)
        seen.add(name)


def read_csv(path: str | Path) -> ReviewTable:
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader, None)
            if header is None:
                raise DatasetError("empty CSV file (no header)", 1)
            if not header:
                raise DatasetError("blank header line", 1)
            _check_header(header, 1)
            rows = []
            for record in reader:
                if not record:
                    continue
                if len(record) != len(header):
                    raise DatasetError(
                        f"expected {len(header)} fields, found {len(record)}", reader.line_num
                    )
                rows.append(tuple(None if c == NULL_SENTINEL else c for c in record))
        except csv.Error as exc:
            raise DatasetError(f"malformed CSV: {exc}", reader.line_num) from None
    return ReviewTable(tuple(header), tuple(rows))


def _json_cell(value: object, key: str, line: int) -> Cell:
    if value is None or isinstance(value, str):
        return value
    if isinstance(value, (bool, int, float)):
        return json.dumps(value)
    raise DatasetError(f"field {key!r} is not a scalar (objects must be flat)", line)


def read_jsonl(path: str | Path) -> ReviewTable:
    columns: dict[str, None] = {}
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON: {exc.msg}", line_no) from None
            if not isinstance(obj, dict):
                raise DatasetError("each line must be a JSON object", line_no)
            record = {}
            for key, value in obj.items():
                if key not in columns:
                    _check_header([key], line_no)
                    columns[key] = None
                record[key] = _json_cell(value, key, line_no)
            records.append(record)
    return ReviewTable.from_rows(list(columns), records)


def read_dataset(path: str | Path, format: str | None = None) -> Dataset:
    """Load a dataset. ``format`` defaults to the file extension.

    Raises:
        DatasetError: malformed content, with the offending line number.
    """
    fmt = infer_format(path, format)
    table = read_csv(path) if fmt == "csv" else read_jsonl(path)
    return Dataset(table, fmt)


def write_csv(table: ReviewTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(table.columns)
        for i, row in enumerate(table.data):
            if NULL_SENTINEL in row:
                raise DatasetError(f"row {i} holds the literal text {NULL_SENTINEL!r}, which CSV reserves for null")
            writer.writerow([NULL_SENTINEL if c is None else c for c in row])


def write_jsonl(table: ReviewTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, row in enumerate(table.data):
            pairs = zip(table.columns, row)
            obj = dict(pairs) if i == 0 else {k: v for k, v in pairs if v is not None}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def write_dataset(table: ReviewTable | Dataset, path: str | Path, format: str | None = None) -> None:
    if isinstance(table, Dataset):
        format = format or table.format
        table = table.table
    fmt = infer_format(path, format)
    if fmt == "csv":
        write_csv(table, path)
    else:
        write_jsonl(table, path)
