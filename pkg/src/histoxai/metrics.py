"""Confusion counts, the four threshold metrics and AUROC."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, ParameterError

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ("Model", "Precision", "Recall", "F1-score", "Accuracy", "Auroc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def flipped(self) -> "ConfusionCounts":
        """Counts with the negative class treated as positive."""
        return ConfusionCounts(tp=self.tn, tn=self.tp, fp=self.fn, fn=self.fp)


def _check_labels(labels: np.ndarray) -> None:
    bad = ~np.isin(labels, (0, 1))
    if bad.any():
        raise DataError(f"labels must be 0 or 1, got {labels[bad][:5].tolist()}")


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size == 0:
        raise DataError("cannot evaluate an empty prediction set")
    if s.size != y.size:
        raise DataError(f"{s.size} scores but {y.size} labels")
    _check_labels(y)
    return s, y.astype(int)


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Predict 1 iff score >= threshold and tally against labels."""
    s, y = _as_arrays(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def _ratio(num: float, den: float, name: str, warnings: list | None) -> float:
    if den == 0:
        msg = f"{name}: zero denominator, reported as 0.0"
        logger.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        return 0.0
    return num / den


def precision(c: ConfusionCounts, warnings: list | None = None) -> float:
    return _ratio(c.tp, c.tp + c.fp, "precision", warnings)


def recall(c: ConfusionCounts, warnings: list | None = None) -> float:
    return _ratio(c.tp, c.tp + c.fn, "recall", warnings)


def accuracy(c: ConfusionCounts, warnings: list | None = None) -> float:
    return _ratio(c.tp + c.tn, c.n, "accuracy", warnings)


def f1(c: ConfusionCounts, warnings: list | None = None) -> float:
    p, r = precision(c, warnings), recall(c, warnings)
    return _ratio(2 * p * r, p + r, "f1", warnings)


def auroc(scores, labels) -> float:
    """Mann-Whitney estimate: P(score_pos > score_neg), ties count one half."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUROC is undefined when only one class is present")
    ranks = rankdata(s)  # midranks for ties
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    auroc: float
    threshold: float
    n: int
    model: str = "model"
    task: str = ""
    averaging: str = "positive"
    warnings: list = field(default_factory=list)

    def to_json(self) -> str:
        keys = ("model", "task", "precision", "recall", "f1", "accuracy", "auroc", "threshold", "n")
        d = asdict(self)
        payload = {k: d[k] for k in keys}
        if self.averaging != "positive":
            payload["averaging"] = self.averaging
        if self.warnings:
            payload["warnings"] = list(self.warnings)
        return json.dumps(payload, indent=2) + "\n"


def evaluate(
    scores,
    labels,
    threshold: float = 0.5,
    averaging: str = "positive",
    model: str = "model",
    task: str = "",
) -> MetricsReport:
    if averaging not in ("positive", "macro"):
        raise ParameterError(f"averaging must be 'positive' or 'macro', got {averaging!r}")
    s, y = _as_arrays(scores, labels)
    c = confusion(s, y, threshold)
    warnings: list[str] = []
    if averaging == "positive":
        p, r = precision(c, warnings), recall(c, warnings)
    else:
        neg = c.flipped()
        p = (precision(c, warnings) + precision(neg, warnings)) / 2
        r = (recall(c, warnings) + recall(neg, warnings)) / 2
    f = _ratio(2 * p * r, p + r, "f1", warnings)
    return MetricsReport(
        precision=p,
        recall=r,
        f1=f,
        accuracy=accuracy(c, warnings),
        auroc=auroc(s, y),
        threshold=threshold,
        n=c.n,
        model=model,
        task=task,
        averaging=averaging,
        warnings=warnings,
    )


def _fmt(x: float) -> str:
    return str(round(float(x), 3))


def format_row(report: MetricsReport) -> list[str]:
    return [report.model] + [
        _fmt(v) for v in (report.precision, report.recall, report.f1, report.accuracy, report.auroc)
    ]


def format_table(reports) -> str:
    """Aligned plain-text table in the column order Model, Precision, ..., Auroc."""
    rows = [list(TABLE_COLUMNS)] + [format_row(r) for r in reports]
    widths = [max(len(row[i]) for row in rows) for i in range(len(TABLE_COLUMNS))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])] + [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"
