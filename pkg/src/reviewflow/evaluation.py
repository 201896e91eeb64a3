"""Screening metrics against ground-truth labels.

All ratios are exact :class:`fractions.Fraction` values; rounding only happens
when a report is rendered as text.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from fractions import Fraction
from itertools import groupby
from numbers import Real
from typing import NamedTuple

from .consensus import INCLUDE, STRATEGIES, ThresholdStrategy, classify
from .errors import DegenerateLabelsError, LengthMismatchError, NonNumericCellError, ReviewFlowError
from .filters import parse_decimal
from .model import ReviewTable


class Confusion(NamedTuple):
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(predictions: Sequence[str], labels: Sequence[int]) -> Confusion:
    if len(predictions) != len(labels):
        raise LengthMismatchError(f"{len(predictions)} predictions for {len(labels)} labels")
    tp = fp = tn = fn = 0
    for pred, label in zip(predictions, labels):
        if pred == INCLUDE:
            if label:
                tp += 1
            else:
                fp += 1
        elif label:
            fn += 1
        else:
            tn += 1
    return Confusion(tp, fp, tn, fn)


def prf(tp: int, fp: int, tn: int, fn: int) -> tuple[Fraction, Fraction | None, Fraction | None]:
    """(accuracy, recall, precision); undefined ratios are None, not 0."""
    n = tp + fp + tn + fn
    if n < 1:
        raise ReviewFlowError("no predictions")
    accuracy = Fraction(tp + tn, n)
    recall = Fraction(tp, tp + fn) if tp + fn else None
    precision = Fraction(tp, tp + fp) if tp + fp else None
    return accuracy, recall, precision


def _check_labels(scores: Sequence[Real], labels: Sequence[int]) -> tuple[int, int]:
    if len(scores) != len(labels):
        raise LengthMismatchError(f"{len(scores)} scores for {len(labels)} labels")
    if any(label not in (0, 1) for label in labels):
        raise ReviewFlowError("labels must be 0 or 1")
    n_pos = sum(labels)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("AUC needs at least one positive and one negative label")
    return n_pos, n_neg


def roc_auc(scores: Sequence[Real], labels: Sequence[int]) -> Fraction:
    """Probability that a random positive outscores a random negative, ties counting half.

    Computed from tie groups in sorted order, O(n log n), exact.
    """
    n_pos, n_neg = _check_labels(scores, labels)
    twice_u = 0
    negatives_below = 0
    for _, group in groupby(sorted(zip(scores, labels), key=lambda p: p[0]), key=lambda p: p[0]):
        group_labels = [label for _, label in group]
        pos = sum(group_labels)
        neg = len(group_labels) - pos
        twice_u += pos * (2 * negatives_below + neg)
        negatives_below += neg
    return Fraction(twice_u, 2 * n_pos * n_neg)


def roc_points(scores: Sequence[Real], labels: Sequence[int]) -> list[tuple[Fraction, Fraction]]:
    """ROC staircase: one (fpr, tpr) point per distinct score, highest first.

    Starts at (0, 0) and ends at (1, 1).
    """
    n_pos, n_neg = _check_labels(scores, labels)
    points = [(Fraction(0), Fraction(0))]
    tp = fp = 0
    ordered = sorted(zip(scores, labels), key=lambda p: p[0], reverse=True)
    for _, group in groupby(ordered, key=lambda p: p[0]):
        for _, label in group:
            if label:
                tp += 1
            else:
                fp += 1
        points.append((Fraction(fp, n_neg), Fraction(tp, n_pos)))
    return points


def trapezoid_area(points: Sequence[tuple[Fraction, Fraction]]) -> Fraction:
    area = Fraction(0)
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2
    return area


@dataclass(frozen=True)
class StrategyMetrics:
    strategy: ThresholdStrategy
    counts: Confusion
    accuracy: Fraction | None
    recall: Fraction | None
    precision: Fraction | None


def _ratio(value: Fraction | None) -> float | None:
    return None if value is None else float(value)


@dataclass(frozen=True)
class MetricsReport:
    n: int
    n_positive: int
    n_excluded_null: int
    strategies: list[StrategyMetrics]
    auc: Fraction | None
    auc_error: str | None = None

    @property
    def positive_rate(self) -> Fraction | None:
        return Fraction(self.n_positive, self.n) if self.n else None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_positive": self.n_positive,
            "positive_rate": _ratio(self.positive_rate),
            "n_excluded_null": self.n_excluded_null,
            "strategies": [
                {
                    "name": s.strategy.name,
                    "threshold": str(s.strategy.threshold),
                    "tp": s.counts.tp,
                    "fp": s.counts.fp,
                    "tn": s.counts.tn,
                    "fn": s.counts.fn,
                    "accuracy": _ratio(s.accuracy),
                    "recall": _ratio(s.recall),
                    "precision": _ratio(s.precision),
                }
                for s in self.strategies
            ],
            "auc": _ratio(self.auc),
            "auc_error": self.auc_error,
        }

    def to_text(self, dataset: str = "dataset") -> str:
        """Aligned one-row-per-dataset table: size, % relevant, one cell per strategy, AUC."""

        def fmt(value: Fraction | None) -> str:
            return "n/a" if value is None else f"{float(value):.4f}"

        rate = "n/a" if self.positive_rate is None else f"{float(self.positive_rate) * 100:.2f}"
        header = ["Dataset", "Number of Articles (% Relevant)"]
        row = [dataset, f"{self.n} ({rate})"]
        for s in self.strategies:
            header.append(f"{s.strategy.name.capitalize()} (T = {s.strategy.threshold})")
            row.append(
                f"Accuracy={fmt(s.accuracy)}, Recall={fmt(s.recall)}, Precision={fmt(s.precision)}"
            )
        header.append("AUC")
        row.append(fmt(self.auc) if self.auc is not None else self.auc_error or "n/a")
        widths = [max(len(h), len(r)) for h, r in zip(header, row)]
        lines = [
            "  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip(),
            "  ".join("-" * w for w in widths),
            "  ".join(r.ljust(w) for r, w in zip(row, widths)).rstrip(),
        ]
        return "\n".join(lines) + "\n"


def _parse_label(value: str, row: int) -> int:
    if value in ("0", "1"):
        return int(value)
    raise NonNumericCellError(f"row {row}: label {value!r} is not 0 or 1")


def extract_scores(
    table: ReviewTable, score_column: str, label_column: str
) -> tuple[list, list[int], int]:
    """Scores and labels for rows with a non-null score, plus the null count.

    Raises:
        ColumnMissingError: either column is absent.
        NonNumericCellError: an unparsable cell; the message names the row.
    """
    score_cells = table.column(score_column)
    label_cells = table.column(label_column)
    scores, labels, excluded = [], [], 0
    for i, (s, y) in enumerate(zip(score_cells, label_cells)):
        if s is None or s == "":
            excluded += 1
            continue
        value = parse_decimal(s)
        if value is None:
            raise NonNumericCellError(f"row {i}: score {s!r} is not a number")
        if y is None:
            raise NonNumericCellError(f"row {i}: label is null")
        scores.append(value)
        labels.append(_parse_label(y, i))
    return scores, labels, excluded


def evaluate(
    table: ReviewTable,
    score_column: str,
    label_column: str,
    strategies: Sequence[ThresholdStrategy] = STRATEGIES,
) -> MetricsReport:
    scores, labels, excluded = extract_scores(table, score_column, label_column)
    results = []
    for strategy in strategies:
        preds = [classify(s, strategy) for s in scores]
        counts = confusion(preds, labels)
        if counts.n:
            accuracy, recall, precision = prf(*counts)
        else:
            accuracy, recall, precision = None, None, None
        results.append(StrategyMetrics(strategy, counts, accuracy, recall, precision))
    auc, auc_error = None, None
    try:
        auc = roc_auc(scores, labels)
    except DegenerateLabelsError as exc:
        auc_error = exc.code
    return MetricsReport(len(scores), sum(labels), excluded, results, auc, auc_error)
