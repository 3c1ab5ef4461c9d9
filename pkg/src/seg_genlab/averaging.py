"""Uniform weight averaging over checkpoint archives.

Two modes: "swa" averages checkpoints of a single run taken at increasing
iterations; "soup" averages the final weights of runs with pairwise distinct
hyperparameter configurations. Averaging can be restricted to the encoder or
decoder; out-of-scope tensors are copied bit-exactly from a base model.

Accumulation is in float64 with a single final rounding to f32, and inputs
are consumed in sorted-model_id order, so results are bit-stable under input
permutation and concurrency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .archive import ArchiveMetadata, TensorArchive, partition_by_role
from .errors import ArityError, IncompatibleArchivesError, ModeError, OrderingError, TrajectoryError

MODES = ("swa", "soup")


@dataclass
class AveragingRequest:
    inputs: list[TensorArchive]
    mode: str
    scope: str = "full"
    base: TensorArchive | None = None  # defaults to the first input

    def resolved_base(self) -> TensorArchive:
        if self.base is not None:
            return self.base
        if not self.inputs:
            raise ArityError("averaging requires at least one input archive")
        return self.inputs[0]


@dataclass
class TrajectorySummary:
    n: int
    iterations: list[int]
    hyperparam_id: str


def validate_swa_trajectory(inputs: list[TensorArchive]) -> TrajectorySummary:
    """Check that inputs form one run's checkpoints at increasing iterations."""
    if not inputs:
        raise ArityError("trajectory validation requires at least one archive")
    hyperparam_ids = {a.metadata.hyperparam_id for a in inputs}
    if len(hyperparam_ids) > 1:
        raise TrajectoryError(
            f"SWA inputs mix hyperparameter configurations: {sorted(hyperparam_ids)}"
        )
    iterations = [a.metadata.iteration for a in inputs]
    for prev, cur in zip(iterations, iterations[1:]):
        if cur <= prev:
            raise OrderingError(
                f"SWA iterations must be strictly increasing, got {prev} then {cur}"
            )
    return TrajectorySummary(
        n=len(inputs), iterations=iterations, hyperparam_id=hyperparam_ids.pop()
    )


def _check_compatible(archives: list[TensorArchive]) -> None:
    reference = archives[0].shapes()
    for other in archives[1:]:
        shapes = other.shapes()
        for name in sorted(set(reference) | set(shapes)):
            if name not in shapes:
                raise IncompatibleArchivesError(
                    f"tensor {name!r} missing from archive {other.metadata.model_id!r}"
                )
            if name not in reference:
                raise IncompatibleArchivesError(
                    f"tensor {name!r} absent from archive {archives[0].metadata.model_id!r}"
                )
            if shapes[name] != reference[name]:
                raise IncompatibleArchivesError(
                    f"tensor {name!r} has shape {shapes[name]} vs {reference[name]}"
                )


def average_weights(request: AveragingRequest) -> TensorArchive:
    """Elementwise mean of the inputs within scope, base values elsewhere."""
    inputs = request.inputs
    if not inputs:
        raise ArityError("averaging requires at least one input archive")
    if request.mode not in MODES:
        raise ModeError(f"unknown mode {request.mode!r}, expected one of {MODES}")
    base = request.resolved_base()
    _check_compatible(inputs + [base])

    if request.mode == "swa":
        validate_swa_trajectory(inputs)
    else:
        hyperparam_ids = [a.metadata.hyperparam_id for a in inputs]
        if len(set(hyperparam_ids)) != len(hyperparam_ids):
            raise ModeError("soup inputs must have pairwise distinct hyperparam_id")

    # Fixed reduction order: sorting makes the result permutation-independent.
    ordered = sorted(
        inputs,
        key=lambda a: (a.metadata.model_id, a.metadata.hyperparam_id, a.metadata.iteration),
    )
    in_scope = partition_by_role(base, request.scope)

    tensors: dict[str, np.ndarray] = {}
    for name in base.tensors:
        if name in in_scope:
            acc = np.zeros(base.tensors[name].shape, dtype=np.float64)
            for archive in ordered:
                acc += archive.tensors[name].astype(np.float64)
            tensors[name] = (acc / len(ordered)).astype(np.float32)
        else:
            tensors[name] = base.tensors[name].copy()

    ids = [a.metadata.model_id for a in ordered]
    if request.mode == "swa":
        hyperparam_id = ordered[0].metadata.hyperparam_id
    else:
        hyperparam_id = "+".join(sorted(a.metadata.hyperparam_id for a in ordered))
    metadata = ArchiveMetadata(
        model_id=f"{request.mode}({'+'.join(ids)})",
        iteration=max(a.metadata.iteration for a in ordered),
        hyperparam_id=hyperparam_id,
        role_prefixes=base.metadata.role_prefixes,
        extra={
            "averaging": {
                "mode": request.mode,
                "scope": request.scope,
                "inputs": ids,
                "base": base.metadata.model_id,
            }
        },
    )
    return TensorArchive(tensors=tensors, metadata=metadata)
