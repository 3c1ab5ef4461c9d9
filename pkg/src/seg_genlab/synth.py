"""Synthetic lesion masks and degraded predictions with known ground truth.

Masks are built from connected blobs grown pixel-by-pixel to an exact
sampled area, placed so that no two blobs touch even diagonally: component
counts and areas are therefore exact oracles, not statistical ones. Blob
counts are Poisson with the configured mean; areas are 1 + Poisson(mean-1)
so the configured means are matched without rounding bias.

Predictions interpolate between the perfect probability map and pure noise
by re-rolling a (1 - quality) fraction of pixels.

All randomness flows through explicitly seeded PCG64 generators, keyed by
(seed, image index, lesion), so outputs are reproducible per configuration.
"""

from __future__ import annotations

import heapq
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PackingError, ValidationError
from .planning import DatasetManifest, ImageRecord, SplitSpec
from .rasters import (
    LesionMask,
    ProbabilityMap,
    mask_filename,
    prob_filename,
    save_mask,
    save_probability_map,
)

MAX_PLACEMENT_ATTEMPTS = 200


@dataclass
class LesionKnobs:
    count_mean: float  # mean blobs per image
    area_mean: float  # mean pixels per blob, >= 1


@dataclass
class SynthConfig:
    seed: int
    image_size: int
    lesions: dict[str, LesionKnobs]
    coarseness: str = "fine"  # "coarse" grows multi-lobed, merged-looking blobs
    predictor_quality: float = 1.0

    def validate(self) -> None:
        if self.image_size < 4:
            raise ValidationError("image_size must be at least 4")
        if self.coarseness not in ("fine", "coarse"):
            raise ValidationError(f"unknown coarseness {self.coarseness!r}")
        if not 0.0 <= self.predictor_quality <= 1.0:
            raise ValidationError("predictor_quality must lie in [0, 1]")
        for lesion, knobs in self.lesions.items():
            if knobs.count_mean < 0:
                raise ValidationError(f"{lesion}: count_mean must be non-negative")
            if knobs.area_mean < 1:
                raise ValidationError(f"{lesion}: area_mean must be at least 1")


@dataclass
class BlobTruth:
    area: int
    anchor: tuple[int, int]  # top-left-most pixel (row, col)


def _rng(*key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def _grow_blob(blocked: np.ndarray, start: tuple[int, int], area: int, metric) -> list[tuple[int, int]] | None:
    """Grow a 4-connected region of exactly ``area`` pixels around ``start``.

    Pixels are accepted in order of ``metric`` distance (deterministic
    (dist, y, x) tie-break), skipping blocked cells; returns None when the
    region cannot reach the requested area.
    """
    h, w = blocked.shape
    sy, sx = start
    if blocked[sy, sx]:
        return None
    heap = [(0.0, sy, sx)]
    seen = {(sy, sx)}
    region: list[tuple[int, int]] = []
    while heap and len(region) < area:
        _, y, x = heapq.heappop(heap)
        region.append((y, x))
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if 0 <= ny < h and 0 <= nx < w and (ny, nx) not in seen and not blocked[ny, nx]:
                seen.add((ny, nx))
                heapq.heappush(heap, (metric(ny, nx), ny, nx))
    return region if len(region) == area else None


def _make_metric(rng: np.random.Generator, center: tuple[int, int], area: int, coarseness: str):
    cy, cx = center
    if coarseness == "fine" or area < 8:
        return lambda y, x: math.hypot(y - cy, x - cx)
    # Coarse: distance to the nearest of a few offset lobes, mimicking small
    # neighbouring lesions merged into one coarse annotation.
    n_lobes = int(rng.integers(2, 5))
    radius = math.sqrt(area / math.pi)
    angles = rng.uniform(0, 2 * math.pi, n_lobes - 1)
    dists = rng.uniform(0.4, 1.3, n_lobes - 1) * radius
    lobes = [(cy, cx)] + [
        (cy + d * math.sin(a), cx + d * math.cos(a)) for a, d in zip(angles, dists)
    ]
    scales = rng.uniform(0.55, 1.0, n_lobes)
    return lambda y, x: min(
        math.hypot(y - ly, x - lx) / s for (ly, lx), s in zip(lobes, scales)
    )


def _block_neighbourhood(blocked: np.ndarray, region: list[tuple[int, int]]) -> None:
    h, w = blocked.shape
    for y, x in region:
        blocked[max(0, y - 1) : min(h, y + 2), max(0, x - 1) : min(w, x + 2)] = True


def generate_mask(
    config: SynthConfig,
    lesion: str | None = None,
    image_index: int = 0,
    image_id: str | None = None,
) -> tuple[LesionMask, list[BlobTruth]]:
    """Deterministic mask plus its exact blob decomposition.

    Blobs never touch (8-connectivity), so the returned list is exactly what
    connected-components labelling recovers.
    """
    config.validate()
    if lesion is None:
        if len(config.lesions) != 1:
            raise ValidationError("lesion must be named when the config has several")
        lesion = next(iter(config.lesions))
    if lesion not in config.lesions:
        raise ValidationError(f"lesion {lesion!r} not configured")
    knobs = config.lesions[lesion]
    lesion_index = sorted(config.lesions).index(lesion)
    rng = _rng(config.seed, image_index, lesion_index)

    size = config.image_size
    bits = np.zeros((size, size), dtype=bool)
    blocked = np.zeros((size, size), dtype=bool)
    n_blobs = int(rng.poisson(knobs.count_mean))
    blobs: list[BlobTruth] = []
    for _ in range(n_blobs):
        area = 1 + int(rng.poisson(knobs.area_mean - 1.0))
        if area > 0.4 * size * size:
            raise PackingError(
                f"blob of {area} px cannot fit a {size}x{size} frame with separation"
            )
        region = None
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            center = (int(rng.integers(0, size)), int(rng.integers(0, size)))
            metric = _make_metric(rng, center, area, config.coarseness)
            region = _grow_blob(blocked, center, area, metric)
            if region is not None:
                break
        if region is None:
            raise PackingError(
                f"could not place blob of {area} px after {MAX_PLACEMENT_ATTEMPTS} attempts "
                f"({len(blobs)} of {n_blobs} placed in {size}x{size})"
            )
        for y, x in region:
            bits[y, x] = True
        _block_neighbourhood(blocked, region)
        blobs.append(BlobTruth(area=area, anchor=min(region)))

    if image_id is None:
        image_id = f"synth_{image_index:04d}"
    return LesionMask(image_id=image_id, lesion=lesion, bits=bits), blobs


def generate_prediction(mask: LesionMask, quality: float, seed: int) -> ProbabilityMap:
    """Degrade the perfect probability map by re-rolling a (1-q) pixel fraction.

    quality 1 reproduces the mask exactly; quality 0 is pure uniform noise,
    independent of the mask. Deterministic per (seed, image_id, lesion).
    """
    if not 0.0 <= quality <= 1.0:
        raise ValidationError("quality must lie in [0, 1]")
    rng = _rng(seed, zlib.crc32(f"{mask.image_id}.{mask.lesion}".encode()))
    probs = mask.bits.astype(np.float64).ravel()
    n_flipped = round((1.0 - quality) * probs.size)
    if n_flipped:
        idx = rng.permutation(probs.size)[:n_flipped]
        probs[idx] = rng.random(n_flipped)
    return ProbabilityMap(image_id=mask.image_id, lesion=mask.lesion, probs=probs.reshape(mask.bits.shape))


# --- dataset-level generation ---------------------------------------------------


@dataclass
class SynthDatasetSpec:
    """A whole synthetic dataset: images, labelling style and predictor."""

    dataset_id: str
    n_images: int
    config: SynthConfig
    style: str = "fine"
    split: SplitSpec = field(default_factory=lambda: SplitSpec(mode="generated", seed=0))

    @classmethod
    def from_obj(cls, obj: dict) -> "SynthDatasetSpec":
        try:
            lesions = {
                code: LesionKnobs(
                    count_mean=float(k["count_mean"]), area_mean=float(k["area_mean"])
                )
                for code, k in obj["lesions"].items()
            }
            config = SynthConfig(
                seed=int(obj["seed"]),
                image_size=int(obj["image_size"]),
                lesions=lesions,
                coarseness=obj.get("coarseness", "fine"),
                predictor_quality=float(obj.get("predictor_quality", 1.0)),
            )
            split_obj = obj.get("split", {})
            return cls(
                dataset_id=obj["dataset_id"],
                n_images=int(obj["n_images"]),
                config=config,
                style=obj.get("style", "fine"),
                split=SplitSpec(
                    mode="generated",
                    seed=int(split_obj.get("seed", 0)),
                    test_ratio=float(split_obj.get("test_ratio", 0.30)),
                    val_ratio=float(split_obj.get("val_ratio", 0.15)),
                ),
            )
        except KeyError as exc:
            raise ValidationError(f"synth config missing field {exc}") from exc


def load_synth_spec(path: str | Path) -> SynthDatasetSpec:
    return SynthDatasetSpec.from_obj(json.loads(Path(path).read_text()))


def generate_dataset(spec: SynthDatasetSpec, out_dir: str | Path) -> DatasetManifest:
    """Write masks, predictions and a manifest for one synthetic dataset."""
    spec.config.validate()
    out = Path(out_dir)
    masks_dir = out / "masks"
    preds_dir = out / "predictions"
    masks_dir.mkdir(parents=True, exist_ok=True)
    preds_dir.mkdir(parents=True, exist_ok=True)

    records = []
    for index in range(spec.n_images):
        image_id = f"{spec.dataset_id}_{index:04d}"
        rec = ImageRecord(image_id=image_id)
        for lesion in sorted(spec.config.lesions):
            mask, _ = generate_mask(spec.config, lesion, image_index=index, image_id=image_id)
            save_mask(mask, masks_dir)
            pred = generate_prediction(mask, spec.config.predictor_quality, spec.config.seed)
            save_probability_map(pred, preds_dir)
            rec.masks[lesion] = f"masks/{mask_filename(image_id, lesion)}"
            rec.predictions[lesion] = f"predictions/{prob_filename(image_id, lesion)}"
        records.append(rec)

    return DatasetManifest(
        dataset_id=spec.dataset_id,
        style=spec.style,
        lesions=sorted(spec.config.lesions),
        images=records,
        split=spec.split,
        root=out,
    )
