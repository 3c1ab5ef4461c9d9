"""Dice and binned precision-recall area, plus replicate aggregation.

Every metric is an exact function of integer confusion counts, so results
are independent of evaluation order and parallelism. Binarization is strict
(p > threshold) and the PR curve is sampled at the 11 thresholds
0.0, 0.1, ..., 1.0, integrated with the trapezoid rule over the polyline
ordered by ascending recall.

Conventions: precision is 1.0 when nothing is predicted, recall is 0.0 when
the ground truth is empty (such degenerate images are flagged and excluded
from macro aggregates), and both-empty Dice is 1.0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ArityError, ConsistencyError, ShapeError, ValidationError
from .rasters import LesionMask, ProbabilityMap

THRESHOLDS = tuple(k / 10 for k in range(11))
METRIC_NAMES = ("dice", "aupr")
AGGREGATIONS = ("micro", "macro")


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )


@dataclass
class PRPoint:
    threshold: float
    precision: float
    recall: float


@dataclass
class MetricRecord:
    combination_id: str
    test_dataset: str
    lesion: str
    replicate_seed: int
    metric: str
    value: float
    n_images: int | None = None
    degenerate_images: int | None = None


@dataclass
class ReplicateSummary:
    mean: float
    min: float
    max: float
    stddev: float
    n: int


@dataclass
class DatasetResult:
    value: float
    n_images: int
    degenerate_images: int


def confusion(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction {pred.shape} vs truth {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = pred.size - tp - fp - fn
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def _dice_from_counts(c: ConfusionCounts) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        return 1.0  # both masks empty: perfect agreement on absence
    return 2 * c.tp / denom


def dice(x: LesionMask, y: LesionMask) -> float:
    """Overlap score 2|X∩Y| / (|X|+|Y|), from integer pixel counts."""
    if x.bits.shape != y.bits.shape:
        raise ShapeError(f"mask dimensions differ: {x.bits.shape} vs {y.bits.shape}")
    return _dice_from_counts(confusion(x.bits, y.bits))


def binarize(p: ProbabilityMap, threshold: float) -> LesionMask:
    """Strict thresholding: lesion wherever p > threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold {threshold} outside [0, 1]")
    return LesionMask(image_id=p.image_id, lesion=p.lesion, bits=p.probs > threshold)


def _threshold_counts(probs: np.ndarray, truth: np.ndarray) -> list[ConfusionCounts]:
    return [confusion(probs > t, truth) for t in THRESHOLDS]


def _curve_from_counts(counts: Sequence[ConfusionCounts]) -> list[PRPoint]:
    points = []
    for threshold, c in zip(THRESHOLDS, counts):
        precision = c.tp / (c.tp + c.fp) if c.tp + c.fp > 0 else 1.0
        recall = c.tp / (c.tp + c.fn) if c.tp + c.fn > 0 else 0.0
        points.append(PRPoint(threshold=threshold, precision=precision, recall=recall))
    # Recall is non-increasing in the threshold, so descending threshold
    # order is ascending recall order with a canonical tie order.
    points.sort(key=lambda pt: -pt.threshold)
    if points[0].recall > 0.0:
        points.insert(0, PRPoint(threshold=points[0].threshold, precision=points[0].precision, recall=0.0))
    return points


def _trapezoid_area(points: Sequence[PRPoint]) -> float:
    area = 0.0
    for a, b in zip(points, points[1:]):
        area += (b.recall - a.recall) * (a.precision + b.precision) / 2.0
    return area


def binned_aupr(p: ProbabilityMap, y: LesionMask) -> tuple[float, list[PRPoint]]:
    """Area under the 11-threshold binned precision-recall polyline."""
    if p.probs.shape != y.bits.shape:
        raise ShapeError(f"map {p.probs.shape} vs mask {y.bits.shape}")
    curve = _curve_from_counts(_threshold_counts(p.probs, y.bits))
    return _trapezoid_area(curve), curve


def _check_pair(pred, truth: LesionMask) -> None:
    if pred.lesion != truth.lesion:
        raise ConsistencyError(
            f"{truth.image_id}: prediction lesion {pred.lesion!r} vs truth {truth.lesion!r}"
        )


def _as_probs(pred) -> np.ndarray:
    if isinstance(pred, ProbabilityMap):
        return pred.probs
    return pred.bits.astype(np.float64)


def evaluate_pair(
    pred, truth: LesionMask, metric: str, dice_threshold: float = 0.5
) -> tuple[float, bool]:
    """Per-image metric value plus a degenerate flag.

    Degenerate means empty ground truth for AUPR and both masks empty for
    Dice; such values are reported but excluded from macro aggregates.
    """
    _check_pair(pred, truth)
    if metric == "dice":
        if isinstance(pred, ProbabilityMap):
            pred = binarize(pred, dice_threshold)
        value = dice(pred, truth)
        degenerate = not truth.bits.any() and not pred.bits.any()
        return value, degenerate
    if metric == "aupr":
        probs = _as_probs(pred)
        if probs.shape != truth.bits.shape:
            raise ShapeError(f"map {probs.shape} vs mask {truth.bits.shape}")
        value = _trapezoid_area(_curve_from_counts(_threshold_counts(probs, truth.bits)))
        return value, not truth.bits.any()
    raise ValidationError(f"unknown metric {metric!r}, expected one of {METRIC_NAMES}")


def evaluate_dataset(
    pairs: Sequence[tuple[ProbabilityMap | LesionMask, LesionMask]],
    metric: str,
    aggregation: str = "micro",
    dice_threshold: float = 0.5,
) -> DatasetResult:
    """Aggregate a metric over one test set.

    micro pools integer confusion counts across all images before applying
    the metric; macro is the unweighted mean of per-image values over the
    non-degenerate images.
    """
    if not pairs:
        raise ArityError("dataset evaluation requires at least one pair")
    if metric not in METRIC_NAMES:
        raise ValidationError(f"unknown metric {metric!r}, expected one of {METRIC_NAMES}")
    if aggregation not in AGGREGATIONS:
        raise ValidationError(f"unknown aggregation {aggregation!r}")
    lesions = {truth.lesion for _, truth in pairs} | {pred.lesion for pred, _ in pairs}
    if len(lesions) > 1:
        raise ConsistencyError(f"pairs mix lesion codes: {sorted(lesions)}")

    per_image = [evaluate_pair(pred, truth, metric, dice_threshold) for pred, truth in pairs]
    degenerate = sum(1 for _, flag in per_image if flag)
    if aggregation == "macro":
        values = [value for value, flag in per_image if not flag]
        if not values:
            raise ArityError("macro aggregation: every image is degenerate")
        return DatasetResult(
            value=float(np.mean(values)), n_images=len(pairs), degenerate_images=degenerate
        )

    if metric == "dice":
        pooled = ConfusionCounts(0, 0, 0, 0)
        for pred, truth in pairs:
            _check_pair(pred, truth)
            mask = pred if isinstance(pred, LesionMask) else binarize(pred, dice_threshold)
            pooled = pooled + confusion(mask.bits, truth.bits)
        value = _dice_from_counts(pooled)
    else:
        pooled_counts = [ConfusionCounts(0, 0, 0, 0) for _ in THRESHOLDS]
        for pred, truth in pairs:
            _check_pair(pred, truth)
            probs = _as_probs(pred)
            for i, c in enumerate(_threshold_counts(probs, truth.bits)):
                pooled_counts[i] = pooled_counts[i] + c
        value = _trapezoid_area(_curve_from_counts(pooled_counts))
    return DatasetResult(value=value, n_images=len(pairs), degenerate_images=degenerate)


def dataset_metric(
    pairs: Sequence[tuple[ProbabilityMap | LesionMask, LesionMask]],
    metric: str,
    aggregation: str = "micro",
    dice_threshold: float = 0.5,
) -> float:
    return evaluate_dataset(pairs, metric, aggregation, dice_threshold).value


RECORD_COLUMNS = (
    "combination_id",
    "test_dataset",
    "lesion",
    "replicate_seed",
    "metric",
    "value",
    "n_images",
    "degenerate_images",
)


def write_records_csv(
    records: Sequence[MetricRecord],
    path: str | Path,
    append: bool = False,
    meta: str | None = None,
) -> None:
    path = Path(path)
    fresh = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(RECORD_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.combination_id,
                    r.test_dataset,
                    r.lesion,
                    r.replicate_seed,
                    r.metric,
                    repr(r.value),
                    "" if r.n_images is None else r.n_images,
                    "" if r.degenerate_images is None else r.degenerate_images,
                ]
            )
        if meta:
            fh.write(f"# {meta}\n")


def _record_from_row(row: dict) -> MetricRecord:
    return MetricRecord(
        combination_id=row["combination_id"],
        test_dataset=row["test_dataset"],
        lesion=row["lesion"],
        replicate_seed=int(row["replicate_seed"]),
        metric=row["metric"],
        value=float(row["value"]),
        n_images=int(row["n_images"]) if row.get("n_images") else None,
        degenerate_images=int(row["degenerate_images"]) if row.get("degenerate_images") else None,
    )


def _read_rows(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            r
            for r in csv.DictReader(fh)
            if r.get("combination_id") and not r["combination_id"].startswith("#")
        ]


def read_records_csv(path: str | Path) -> list[MetricRecord]:
    return [_record_from_row(row) for row in _read_rows(path)]


def read_strategy_records_csv(path: str | Path) -> dict[str, list[MetricRecord]]:
    """Read a records CSV carrying an extra leading ``strategy`` column."""
    grouped: dict[str, list[MetricRecord]] = {}
    for row in _read_rows(path):
        strategy = row.get("strategy")
        if not strategy:
            raise ValidationError(f"{path}: strategy column required for strategy reports")
        grouped.setdefault(strategy, []).append(_record_from_row(row))
    return grouped


GroupKey = tuple[str, str, str, str]  # combination, test set, lesion, metric


def aggregate_replicates(records: Iterable[MetricRecord]) -> dict[GroupKey, ReplicateSummary]:
    """Mean and spread per (combination, test set, lesion, metric) group."""
    groups: dict[GroupKey, list[float]] = {}
    for record in records:
        key = (record.combination_id, record.test_dataset, record.lesion, record.metric)
        groups.setdefault(key, []).append(record.value)
    if not groups:
        raise ArityError("no records to aggregate")
    return {
        key: ReplicateSummary(
            mean=float(np.mean(values)),
            min=float(np.min(values)),
            max=float(np.max(values)),
            stddev=float(np.std(values)),
            n=len(values),
        )
        for key, values in groups.items()
    }
