"""Detection metrics, confusion matrices, and area-under-time over test slices.

Ratios whose denominator is zero are reported as ``None`` ("undefined"),
never as 0.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

MALWARE = "malware"
BENIGN = "benign"
AUT_METRICS = ("acc", "pre", "rec", "f1", "fpr", "fnr")
METRICS = ("acc", "pre", "rec", "f1", "fpr", "fnr", "tpr", "tnr")


class LengthMismatch(ValueError):
    pass


class Empty(ValueError):
    pass


class OutOfRangeId(ValueError):
    pass


class EmptyMatrix(ValueError):
    pass


class TooFewSlices(ValueError):
    pass


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def _is_malware(label) -> bool:
    if isinstance(label, str):
        if label not in (MALWARE, BENIGN):
            raise ValueError(f"binary labels must be {MALWARE!r} or {BENIGN!r}, got {label!r}")
        return label == MALWARE
    return bool(label)


@dataclass(frozen=True)
class BinaryCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricsReport:
    acc: float | None
    pre: float | None
    rec: float | None
    f1: float | None
    fpr: float | None
    fnr: float | None
    tpr: float | None
    tnr: float | None

    def as_dict(self) -> dict[str, float | None]:
        return asdict(self)

    def percent(self) -> dict[str, float | None]:
        return {k: (None if v is None else 100.0 * v) for k, v in self.as_dict().items()}


def binary_counts(predictions: Sequence, labels: Sequence) -> BinaryCounts:
    """Tally TP/TN/FP/FN with malware as the positive class.

    Labels may be the strings ``"malware"``/``"benign"`` or truthy/falsy values.
    """
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(labels)} labels")
    if not labels:
        raise Empty("no samples")
    p = np.fromiter((_is_malware(x) for x in predictions), dtype=bool, count=len(predictions))
    y = np.fromiter((_is_malware(x) for x in labels), dtype=bool, count=len(labels))
    return BinaryCounts(
        tp=int(np.sum(p & y)),
        tn=int(np.sum(~p & ~y)),
        fp=int(np.sum(p & ~y)),
        fn=int(np.sum(~p & y)),
    )


def binary_metrics(counts: BinaryCounts) -> MetricsReport:
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    pre = _ratio(tp, tp + fp)
    rec = _ratio(tp, tp + fn)
    return MetricsReport(
        acc=_ratio(tp + tn, counts.total),
        pre=pre,
        rec=rec,
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
        fpr=_ratio(fp, tn + fp),
        fnr=_ratio(fn, tp + fn),
        tpr=rec,
        tnr=_ratio(tn, tn + fp),
    )


# ---------------------------------------------------------------- multi-class


def confusion(predictions: Sequence[int], labels: Sequence[int], n: int) -> np.ndarray:
    """N x N counts, rows = true family, columns = predicted family; ids are 1-based."""
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(labels)} labels")
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    for arr in (p, y):
        if arr.size and (arr.min() < 1 or arr.max() > n):
            raise OutOfRangeId(f"family ids must lie in [1, {n}]")
    matrix = np.zeros((n, n), dtype=np.int64)
    np.add.at(matrix, (y - 1, p - 1), 1)
    return matrix


def global_accuracy(matrix: np.ndarray) -> float:
    matrix = np.asarray(matrix)
    total = int(matrix.sum())
    if total == 0:
        raise EmptyMatrix("confusion matrix has no samples")
    return int(np.trace(matrix)) / total


@dataclass(frozen=True)
class FamilyScores:
    pre: float | None
    rec: float | None
    f1: float | None


def per_family_prf(matrix: np.ndarray) -> list[FamilyScores]:
    """One-vs-rest precision/recall/F1 for each family (row) of the matrix."""
    matrix = np.asarray(matrix)
    cols = matrix.sum(axis=0)
    rows = matrix.sum(axis=1)
    out = []
    for i in range(matrix.shape[0]):
        hit = int(matrix[i, i])
        pre = _ratio(hit, int(cols[i]))
        rec = _ratio(hit, int(rows[i]))
        if pre is None or rec is None:
            f1 = None
        elif pre + rec == 0:
            f1 = 0.0
        else:
            f1 = 2 * pre * rec / (pre + rec)
        out.append(FamilyScores(pre, rec, f1))
    return out


def macro_average(scores: Iterable[FamilyScores]) -> dict[str, float | None]:
    scores = list(scores)
    out = {}
    for key in ("pre", "rec", "f1"):
        vals = [getattr(s, key) for s in scores if getattr(s, key) is not None]
        out[key] = sum(vals) / len(vals) if vals else None
    return out


# ---------------------------------------------------------------- time decay


def compute_aut(series: Sequence[float]) -> float:
    """Trapezoidal mean of a metric over N equally spaced slices.

    AUT = 1/(N-1) * sum_k (f_k + f_{k+1}) / 2. Units follow the input.
    """
    values = [float(v) for v in series]
    if len(values) < 2:
        raise TooFewSlices(f"AUT needs at least 2 slices, got {len(values)}")
    if not all(math.isfinite(v) for v in values):
        raise ValueError("AUT series must be finite")
    n = len(values)
    return math.fsum((values[k] + values[k + 1]) / 2 for k in range(n - 1)) / (n - 1)


@dataclass
class DriftReport:
    slices: list[tuple[Hashable, MetricsReport]]
    aut: dict[str, float | None]

    def series(self, metric: str) -> list[float | None]:
        return [getattr(report, metric) for _, report in self.slices]

    def non_decreasing(self, metric: str) -> bool:
        vals = self.series(metric)
        if any(v is None for v in vals):
            return False
        return all(b >= a for a, b in zip(vals, vals[1:]))

    @property
    def flags(self) -> dict[str, bool]:
        return {f"{m}_non_decreasing": self.non_decreasing(m) for m in AUT_METRICS}

    def to_csv(self, percent: bool = False) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["slice", *METRICS])
        for label, report in self.slices:
            vals = report.percent() if percent else report.as_dict()
            writer.writerow([label, *("undefined" if vals[m] is None else repr(vals[m]) for m in METRICS)])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "format_version": 1,
            "slices": [{"slice": label, **report.as_dict()} for label, report in self.slices],
            "aut": self.aut,
            "flags": self.flags,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def drift_report(slices: Sequence[tuple[Hashable, MetricsReport]]) -> DriftReport:
    """AUT of each of acc/pre/rec/f1/fpr/fnr over already-scored chronological slices."""
    if len(slices) < 2:
        raise TooFewSlices(f"drift evaluation needs at least 2 slices, got {len(slices)}")
    aut = {}
    for metric in AUT_METRICS:
        vals = [getattr(r, metric) for _, r in slices]
        aut[metric] = None if any(v is None for v in vals) else compute_aut(vals)
    return DriftReport(list(slices), aut)


def drift_protocol(
    predict: Callable[[Sequence], Sequence],
    slices: Sequence[tuple[Hashable, Sequence[tuple[object, object]]]],
) -> DriftReport:
    """Score a fixed (already trained) model on each chronological slice, then take AUT.

    ``slices`` holds ``(label, [(sample, truth), ...])`` in time order and
    ``predict`` maps a list of samples to malware/benign predictions.
    """
    if len(slices) < 2:
        raise TooFewSlices(f"drift evaluation needs at least 2 slices, got {len(slices)}")
    scored = []
    for label, dataset in slices:
        samples = [s for s, _ in dataset]
        truth = [t for _, t in dataset]
        scored.append((label, binary_metrics(binary_counts(list(predict(samples)), truth))))
    return drift_report(scored)


def matrix_to_csv(matrix: np.ndarray, names: Sequence[str] | None = None) -> str:
    matrix = np.asarray(matrix)
    names = list(names) if names is not None else [str(i + 1) for i in range(matrix.shape[0])]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["true\\pred", *names])
    for name, row in zip(names, matrix):
        writer.writerow([name, *map(int, row)])
    return buf.getvalue()
