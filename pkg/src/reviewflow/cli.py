"""Command-line entry points.

Exit codes: 0 success, 1 configuration or validation error, 2 runtime error,
3 partial success (some rows failed but outputs were written). Diagnostics go
to stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections.abc import Sequence
from decimal import Decimal, InvalidOperation
from pathlib import Path

from . import __version__
from .config import WorkflowConfig, load_config
from .consensus import ConsensusConfig, apply_consensus, strategies_for
from .datasets import Dataset, read_dataset, write_dataset
from .engine import WorkflowValidationError, run_workflow, validate_schema
from .errors import (
    AuthMissingError,
    ColumnMissingError,
    ConfigError,
    DatasetError,
    DegenerateLabelsError,
    NonNumericCellError,
    ReviewFlowError,
)
from .evaluation import evaluate, extract_scores, roc_points
from .providers import resolve_credential

logger = logging.getLogger("reviewflow")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3

# Errors that mean "fix your inputs" rather than "something broke while running".
_INVALID = (
    ConfigError,
    DatasetError,
    WorkflowValidationError,
    AuthMissingError,
    ColumnMissingError,
    NonNumericCellError,
    DegenerateLabelsError,
)


def _err(message: str) -> None:
    print(f"reviewflow: {message}", file=sys.stderr)


def dump_json(value: object) -> str:
    """Report serialization: sorted keys, two-space indent, trailing newline."""
    return json.dumps(value, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _load(args: argparse.Namespace) -> WorkflowConfig:
    return load_config(args.workflow, env_file=args.env_file)


def cmd_run(args: argparse.Namespace) -> int:
    config = _load(args)
    dataset = read_dataset(args.input, args.input_format)
    schema = config.schema
    if args.max_concurrency is not None:
        schema = type(schema)(schema.rounds, args.max_concurrency)
    report = run_workflow(
        schema, dataset.table, config.agents, config.providers, environment=config.environment
    )
    out_format = args.format or None
    write_dataset(Dataset(report.table, dataset.format), args.output, out_format)
    if args.report:
        Path(args.report).write_text(dump_json(report.to_dict()), encoding="utf-8")
    failures = report.failures
    for failure in failures:
        _err(f"round {failure.round_id} agent {failure.agent} row {failure.row}: {failure.code}: {failure.message}")
    logger.info("total cost %s", report.ledger.total)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    config = _load(args)
    if args.input:
        table = read_dataset(args.input, args.input_format).table
        issues = validate_schema(config.schema, table.columns, config.agents, config.providers)
        if issues:
            raise WorkflowValidationError(issues)
    used = {config.agents[n].provider for r in config.rounds for n in r.reviewers}
    for name in sorted(used):
        provider = config.providers[name]
        if provider.kind != "mock":
            try:
                resolve_credential(provider, config.environment)
            except AuthMissingError as exc:
                _err(f"warning: {exc}")
    _err(f"ok: {len(config.providers)} providers, {len(config.agents)} agents, {len(config.rounds)} rounds")
    return EXIT_OK


def cmd_consensus(args: argparse.Namespace) -> int:
    preset = _load(args).consensus if args.workflow else None
    juniors = args.junior or (list(preset.junior_columns) if preset else [])
    senior = args.senior or (preset.senior_column if preset else None)
    out_col = args.out_col or (preset.output_column if preset else "final_score")
    neutral = args.neutral_score if args.neutral_score is not None else (preset.neutral_score if preset else 3)
    if len(juniors) != 2 or senior is None:
        raise ConfigError("consensus needs two --junior columns and one --senior column")
    try:
        config = ConsensusConfig(tuple(juniors), senior, out_col, neutral)
    except ReviewFlowError as exc:
        raise ConfigError(str(exc)) from None
    dataset = read_dataset(args.input, args.input_format)
    result = apply_consensus(dataset.table, config)
    write_dataset(Dataset(result.table, dataset.format), args.output, args.format or None)
    for failure in result.failures:
        _err(f"{failure.code}: {failure.message}")
    return EXIT_PARTIAL if result.failures else EXIT_OK


def _thresholds(text: str) -> list[Decimal]:
    try:
        values = [Decimal(part.strip()) for part in text.split(",") if part.strip()]
    except InvalidOperation:
        raise ConfigError(f"bad --thresholds {text!r}") from None
    if not values:
        raise ConfigError("--thresholds is empty")
    return values


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        strategies = strategies_for(_thresholds(args.thresholds))
    except ReviewFlowError as exc:
        raise ConfigError(str(exc)) from None
    table = read_dataset(args.input, args.input_format).table
    report = evaluate(table, args.score_col, args.label_col, strategies)
    if args.json:
        sys.stdout.write(dump_json(report.to_dict()))
    else:
        sys.stdout.write(report.to_text(Path(args.input).stem))
    if report.n_excluded_null:
        _err(f"{report.n_excluded_null} rows with a null score were left out")
    if args.roc_out:
        scores, labels, _ = extract_scores(table, args.score_col, args.label_col)
        points = roc_points(scores, labels)
        with open(args.roc_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["fpr", "tpr"])
            for fpr, tpr in points:
                writer.writerow([repr(float(fpr)), repr(float(tpr))])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reviewflow", description="Run LLM reviewer workflows over tables.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def io_args(p: argparse.ArgumentParser, output: bool) -> None:
        p.add_argument("--input", required=True, type=Path)
        p.add_argument("--input-format", choices=("csv", "jsonl"), help="default: from the extension")
        if output:
            p.add_argument("--output", required=True, type=Path)
            p.add_argument("--format", choices=("csv", "jsonl"), help="output format (default: input's)")

    run = sub.add_parser("run", help="execute a workflow")
    run.add_argument("--workflow", required=True, type=Path)
    io_args(run, output=True)
    run.add_argument("--report", type=Path, help="write the run report JSON here")
    run.add_argument("--env-file", type=Path)
    run.add_argument("--max-concurrency", type=int, help="override settings.max_concurrency")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a workflow without calling any provider")
    val.add_argument("--workflow", required=True, type=Path)
    val.add_argument("--input", type=Path)
    val.add_argument("--input-format", choices=("csv", "jsonl"))
    val.add_argument("--env-file", type=Path)
    val.set_defaults(func=cmd_validate)

    con = sub.add_parser("consensus", help="combine junior and senior scores")
    io_args(con, output=True)
    con.add_argument("--junior", action="append", help="junior score column (give twice)")
    con.add_argument("--senior")
    con.add_argument("--out-col")
    con.add_argument("--neutral-score", type=int)
    con.add_argument("--workflow", type=Path, help="take defaults from its [consensus] section")
    con.add_argument("--env-file", type=Path)
    con.set_defaults(func=cmd_consensus)

    ev = sub.add_parser("eval", help="score predictions against labels")
    io_args(ev, output=False)
    ev.add_argument("--score-col", required=True)
    ev.add_argument("--label-col", required=True)
    ev.add_argument("--thresholds", default="1.5,3.0,4.5")
    ev.add_argument("--roc-out", type=Path, help="write ROC points (fpr,tpr) as CSV")
    ev.add_argument("--json", action="store_true", help="print the report as JSON")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run" and args.max_concurrency is not None and args.max_concurrency < 1:
        _err("--max-concurrency must be positive")
        return EXIT_INVALID
    try:
        return args.func(args)
    except _INVALID as exc:
        _err(f"{exc.code}: {exc}")
        return EXIT_INVALID
    except ReviewFlowError as exc:
        _err(f"{exc.code}: {exc}")
        return EXIT_RUNTIME
    except OSError as exc:
        _err(f"io_error: {exc}")
        return EXIT_RUNTIME
    except Exception:
        logger.exception("unexpected error")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
