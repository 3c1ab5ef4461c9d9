"""Shared fixtures and independent oracle implementations.

The oracles here deliberately avoid the library's code paths: plain-Python
loops, math.fsum accumulation and stack-based flood fill, so that agreement
with the package is evidence rather than tautology.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from seg_genlab.archive import ArchiveMetadata, TensorArchive


def ulp_diff_f32(a: np.ndarray, b: np.ndarray) -> int:
    """Max distance in representable float32 steps between two arrays."""
    def key(x):
        bits = np.ascontiguousarray(x, dtype=np.float32).view(np.int32).astype(np.int64)
        return np.where(bits < 0, np.int64(-(2**31)) - bits, bits)

    return int(np.abs(key(a) - key(b)).max(initial=0))


def fsum_mean_f32(stacks: list[np.ndarray]) -> np.ndarray:
    """Per-element mean via exact summation, rounded once to f32."""
    flat = [np.asarray(s, dtype=np.float64).ravel() for s in stacks]
    out = np.empty(flat[0].size, dtype=np.float64)
    for i in range(flat[0].size):
        out[i] = math.fsum(float(arr[i]) for arr in flat) / len(flat)
    return out.astype(np.float32).reshape(stacks[0].shape)


def flood_fill_areas(bits: np.ndarray, connectivity: int) -> list[int]:
    """Stack-based flood fill, areas ordered by first raster-scan pixel."""
    if connectivity == 4:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        steps = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    h, w = bits.shape
    seen = np.zeros_like(bits, dtype=bool)
    areas = []
    for y in range(h):
        for x in range(w):
            if not bits[y, x] or seen[y, x]:
                continue
            stack = [(y, x)]
            seen[y, x] = True
            area = 0
            while stack:
                cy, cx = stack.pop()
                area += 1
                for dy, dx in steps:
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        stack.append((ny, nx))
            areas.append(area)
    return areas


def binned_aupr_oracle(probs: np.ndarray, truth: np.ndarray) -> float:
    """Independent 11-threshold + trapezoid re-implementation."""
    points = []
    for k in range(11):
        tau = k / 10
        tp = fp = fn = 0
        for p, t in zip(probs.ravel().tolist(), truth.ravel().tolist()):
            predicted = p > tau
            if predicted and t:
                tp += 1
            elif predicted:
                fp += 1
            elif t:
                fn += 1
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        points.append((tau, precision, recall))
    points.sort(key=lambda x: -x[0])  # descending threshold = ascending recall
    if points[0][2] > 0:
        points.insert(0, (points[0][0], points[0][1], 0.0))
    area = 0.0
    for (_, p0, r0), (_, p1, r1) in zip(points, points[1:]):
        area += (r1 - r0) * (p0 + p1) / 2
    return area


def dice_oracle(x: np.ndarray, y: np.ndarray) -> float:
    """Exhaustive pixel-loop Dice."""
    inter = size_x = size_y = 0
    for a, b in zip(x.ravel().tolist(), y.ravel().tolist()):
        size_x += a
        size_y += b
        inter += a and b
    if size_x + size_y == 0:
        return 1.0
    return 2 * inter / (size_x + size_y)


def random_archive(
    rng: np.random.Generator,
    model_id: str,
    n_tensors: int = 4,
    max_elems: int = 64,
    iteration: int = 0,
    hyperparam_id: str = "h0",
    with_roles: bool = True,
) -> TensorArchive:
    tensors = {}
    for i in range(n_tensors):
        prefix = "enc." if i % 2 == 0 else "dec."
        ndim = int(rng.integers(1, 4))
        shape = [int(rng.integers(1, 5)) for _ in range(ndim)]
        while np.prod(shape) > max_elems:
            shape.pop()
            if not shape:
                shape = [1]
        tensors[f"{prefix}t{i}"] = rng.normal(size=shape).astype(np.float32)
    prefixes = {"encoder": ["enc."], "decoder": ["dec."]} if with_roles else None
    return TensorArchive(
        tensors=tensors,
        metadata=ArchiveMetadata(
            model_id=model_id,
            iteration=iteration,
            hyperparam_id=hyperparam_id,
            role_prefixes=prefixes,
        ),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(2024017))
