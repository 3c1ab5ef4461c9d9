"""Labelling-style characterization of datasets.

Per-image lesion count and mean lesion area come from connected components;
dataset summaries are medians and interquartile ranges in log10 space plus a
2D histogram suitable for joint-distribution plots (few large blobs = coarse
labelling, many small ones = fine). External per-image quality grades are
ingested and normalized, never computed here.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ArityError, ComparisonError, ConsistencyError, ParseError
from .rasters import LesionMask

QUALITY_GRADES = ("Good", "Usable", "Reject")
DEFAULT_CONNECTIVITY = 8
DEFAULT_BIN_WIDTH = 0.25

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


@dataclass
class LesionStats:
    image_id: str
    lesion: str
    lesion_count: int
    total_area: int
    mean_area: float | None  # absent when the mask is empty


@dataclass
class HistogramSpec:
    """Bin layout for the (log10 mean area, log10 count) joint histogram.

    When edges are omitted they are derived from the data at ``bin_width``
    granularity; explicit edges clamp out-of-range values into the border
    bins so the cell counts always sum to the contributing image count.
    """

    bin_width: float = DEFAULT_BIN_WIDTH
    log_area_edges: np.ndarray | None = None
    log_count_edges: np.ndarray | None = None


@dataclass
class StyleSummary:
    dataset_id: str
    lesion: str
    n_images: int  # images with at least one lesion
    median_log_count: float | None
    median_log_area: float | None
    iqr_log_count: float | None
    iqr_log_area: float | None
    histogram: np.ndarray | None  # (area bins, count bins)
    log_area_edges: np.ndarray | None
    log_count_edges: np.ndarray | None

    @property
    def empty(self) -> bool:
        return self.n_images == 0


@dataclass
class QualityDistribution:
    dataset_id: str
    fractions: dict[str, float]  # grade -> fraction, sums to 1


def connected_components(mask: LesionMask, connectivity: int = DEFAULT_CONNECTIVITY) -> list[int]:
    """Areas of maximal connected regions, ordered by first raster-scan pixel."""
    if connectivity not in _STRUCTURES:
        raise ParseError(f"connectivity must be 4 or 8, got {connectivity}")
    labels, n = ndimage.label(mask.bits, structure=_STRUCTURES[connectivity])
    if n == 0:
        return []
    flat = labels.ravel()
    areas = np.bincount(flat, minlength=n + 1)[1:]
    first_seen = np.full(n + 1, flat.size, dtype=np.intp)
    np.minimum.at(first_seen, flat, np.arange(flat.size, dtype=np.intp))
    order = np.argsort(first_seen[1:], kind="stable")
    return [int(areas[i]) for i in order]


def lesion_stats(mask: LesionMask, connectivity: int = DEFAULT_CONNECTIVITY) -> LesionStats:
    areas = connected_components(mask, connectivity)
    count = len(areas)
    total = int(sum(areas))
    return LesionStats(
        image_id=mask.image_id,
        lesion=mask.lesion,
        lesion_count=count,
        total_area=total,
        mean_area=total / count if count else None,
    )


def _edges(values: np.ndarray, spec_edges: np.ndarray | None, width: float) -> np.ndarray:
    if spec_edges is not None:
        return np.asarray(spec_edges, dtype=np.float64)
    lo = math.floor(values.min() / width) * width
    hi = math.ceil(values.max() / width) * width
    if hi <= lo:
        hi = lo + width
    n_bins = int(round((hi - lo) / width))
    return lo + width * np.arange(n_bins + 1)


def style_summary(
    stats: list[LesionStats],
    dataset_id: str = "",
    bins: HistogramSpec | None = None,
) -> StyleSummary:
    """Log-space medians, IQRs and joint histogram over non-empty images."""
    if not stats:
        raise ArityError("style summary requires at least one image's stats")
    lesions = {s.lesion for s in stats}
    if len(lesions) > 1:
        raise ConsistencyError(f"stats mix lesion codes: {sorted(lesions)}")
    lesion = lesions.pop()
    bins = bins or HistogramSpec()

    contributing = [s for s in stats if s.lesion_count > 0]
    if not contributing:
        return StyleSummary(
            dataset_id=dataset_id, lesion=lesion, n_images=0,
            median_log_count=None, median_log_area=None,
            iqr_log_count=None, iqr_log_area=None,
            histogram=None, log_area_edges=None, log_count_edges=None,
        )

    log_counts = np.log10([s.lesion_count for s in contributing])
    log_areas = np.log10([s.mean_area for s in contributing])
    area_edges = _edges(log_areas, bins.log_area_edges, bins.bin_width)
    count_edges = _edges(log_counts, bins.log_count_edges, bins.bin_width)
    # Clamp into the outer bins so every image lands in a cell.
    eps = 1e-12
    a = np.clip(log_areas, area_edges[0], area_edges[-1] - eps)
    c = np.clip(log_counts, count_edges[0], count_edges[-1] - eps)
    hist, _, _ = np.histogram2d(a, c, bins=(area_edges, count_edges))

    q25c, q75c = np.percentile(log_counts, [25, 75])
    q25a, q75a = np.percentile(log_areas, [25, 75])
    return StyleSummary(
        dataset_id=dataset_id,
        lesion=lesion,
        n_images=len(contributing),
        median_log_count=float(np.median(log_counts)),
        median_log_area=float(np.median(log_areas)),
        iqr_log_count=float(q75c - q25c),
        iqr_log_area=float(q75a - q25a),
        histogram=hist.astype(np.int64),
        log_area_edges=area_edges,
        log_count_edges=count_edges,
    )


def _is_coarser(a: StyleSummary, b: StyleSummary) -> bool:
    area_margin = (a.iqr_log_area + b.iqr_log_area) / 2 / 2
    count_margin = (a.iqr_log_count + b.iqr_log_count) / 2 / 2
    return (
        a.median_log_area - b.median_log_area > area_margin
        and b.median_log_count - a.median_log_count > count_margin
    )


def compare_styles(a: StyleSummary, b: StyleSummary) -> str:
    """"coarser"/"finer" when separated beyond half the pooled IQR, else "overlapping"."""
    if a.lesion != b.lesion:
        raise ConsistencyError(f"comparing different lesions: {a.lesion} vs {b.lesion}")
    if a.empty or b.empty:
        raise ComparisonError("cannot compare styles of empty summaries")
    if _is_coarser(a, b):
        return "coarser"
    if _is_coarser(b, a):
        return "finer"
    return "overlapping"


def quality_distribution(grades, dataset_id: str = "") -> QualityDistribution:
    """Normalized fractions over the Good/Usable/Reject grades."""
    if hasattr(grades, "items"):
        grades = list(grades.values())
    else:
        grades = [g for _, g in grades] if grades and isinstance(grades[0], tuple) else list(grades)
    if not grades:
        raise ArityError("quality distribution requires at least one grade")
    counts = dict.fromkeys(QUALITY_GRADES, 0)
    for grade in grades:
        if grade not in counts:
            raise ParseError(f"unknown quality grade {grade!r}, expected one of {QUALITY_GRADES}")
        counts[grade] += 1
    total = len(grades)
    return QualityDistribution(
        dataset_id=dataset_id,
        fractions={grade: counts[grade] / total for grade in QUALITY_GRADES},
    )


def load_grades_csv(path: str | Path) -> dict[str, str]:
    """Read an image_id,grade CSV (header required)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"image_id", "grade"} - set(reader.fieldnames):
            raise ParseError(f"{path}: expected columns image_id,grade")
        return {row["image_id"]: row["grade"] for row in reader}
