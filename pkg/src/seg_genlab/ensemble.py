"""Prediction ensembling: uniform per-pixel averaging of probability maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArityError, ConsistencyError, ShapeError
from .rasters import ProbabilityMap


@dataclass
class EnsembleSet:
    """Probability maps for one (image, lesion) from multiple models.

    ``member_ids`` name the producing models and fix the reduction order;
    when omitted, list position is used.
    """

    members: list[ProbabilityMap]
    member_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.member_ids:
            self.member_ids = [f"{i:04d}" for i in range(len(self.members))]

    @property
    def n(self) -> int:
        return len(self.members)


def ensemble_average(ensemble: EnsembleSet) -> ProbabilityMap:
    """Per-pixel arithmetic mean in float64, bit-stable under member order.

    Members are consumed sorted by member id, so any permutation of the set
    produces a bit-identical result. The output is clamped to [0, 1] only
    against rounding drift.
    """
    if ensemble.n == 0:
        raise ArityError("ensemble requires at least one member")
    if len(ensemble.member_ids) != ensemble.n:
        raise ArityError("member_ids and members must have equal length")
    first = ensemble.members[0]
    for member in ensemble.members[1:]:
        if member.probs.shape != first.probs.shape:
            raise ShapeError(
                f"{member.image_id}: member dimensions {member.probs.shape} "
                f"vs {first.probs.shape}"
            )
        if (member.image_id, member.lesion) != (first.image_id, first.lesion):
            raise ConsistencyError(
                f"ensemble mixes {member.image_id}.{member.lesion} "
                f"with {first.image_id}.{first.lesion}"
            )
    order = sorted(range(ensemble.n), key=lambda i: ensemble.member_ids[i])
    # Neumaier-compensated summation: the sum is correctly rounded, so the
    # mean is within 1 ulp (the final division) of the exact value.
    total = np.zeros_like(first.probs, dtype=np.float64)
    compensation = np.zeros_like(total)
    for index in order:
        member = ensemble.members[index].probs.astype(np.float64)
        partial = total + member
        larger = np.abs(total) >= np.abs(member)
        compensation += np.where(larger, (total - partial) + member, (member - partial) + total)
        total = partial
    mean = (total + compensation) / ensemble.n
    np.clip(mean, 0.0, 1.0, out=mean)
    return ProbabilityMap(image_id=first.image_id, lesion=first.lesion, probs=mean)
