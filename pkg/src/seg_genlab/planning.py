"""Dataset manifests, split generation, combination enumeration and reports.

A study over D datasets trains one model per non-empty subset of training
splits (2^D - 1 combinations), optionally holding datasets out for
leave-one-out evaluation. Reports join metric records back onto the plan:
per-scenario tables ordered by total training images, and per-combination
comparisons of generalization strategies against a baseline.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ArityError, JoinError, SizeError, ValidationError
from .metrics import MetricRecord

SPLIT_NAMES = ("train", "val", "test")
STYLE_TAGS = ("fine", "coarse", "mixed")
DEFAULT_TEST_RATIO = 0.30
DEFAULT_VAL_RATIO = 0.15


@dataclass
class ImageRecord:
    image_id: str
    image: str | None = None
    masks: dict[str, str] = field(default_factory=dict)
    predictions: dict[str, str] = field(default_factory=dict)


@dataclass
class SplitSpec:
    """Either a provided per-image assignment or a seeded generation recipe.

    Generated splits keep mode "generated" after materialization; the
    assignment then records the realized partition alongside its recipe.
    """

    mode: str  # "provided" | "generated"
    assignment: dict[str, str] | None = None
    seed: int | None = None
    test_ratio: float = DEFAULT_TEST_RATIO
    val_ratio: float = DEFAULT_VAL_RATIO


@dataclass
class DatasetManifest:
    dataset_id: str
    style: str
    lesions: list[str]
    images: list[ImageRecord]
    split: SplitSpec
    root: Path | None = None  # directory of the manifest file, for relative paths

    def image_ids(self) -> list[str]:
        return [rec.image_id for rec in self.images]

    def split_ids(self, bucket: str) -> list[str]:
        if self.split.assignment is None:
            raise ValidationError(f"{self.dataset_id}: split not materialized")
        return sorted(i for i, b in self.split.assignment.items() if b == bucket)

    def train_size(self) -> int:
        return len(self.split_ids("train"))

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p

    def validate(self) -> None:
        ids = self.image_ids()
        if len(set(ids)) != len(ids):
            raise ValidationError(f"{self.dataset_id}: duplicate image_ids")
        if self.style not in STYLE_TAGS:
            raise ValidationError(f"{self.dataset_id}: unknown style tag {self.style!r}")
        if self.split.mode not in ("provided", "generated"):
            raise ValidationError(f"{self.dataset_id}: unknown split mode {self.split.mode!r}")
        if self.split.assignment is not None:
            if set(self.split.assignment) != set(ids):
                raise ValidationError(
                    f"{self.dataset_id}: split assignment does not cover the image set"
                )
            bad = {b for b in self.split.assignment.values()} - set(SPLIT_NAMES)
            if bad:
                raise ValidationError(f"{self.dataset_id}: unknown split buckets {sorted(bad)}")


@dataclass
class ComboSpec:
    combination_id: str
    members: list[str]
    total_training_images: int
    style_composition: list[str]
    style: str


@dataclass
class ExperimentPlan:
    datasets: list[DatasetManifest]
    combinations: list[ComboSpec]
    held_out: list[str]
    replicate_seeds: list[int]

    def dataset(self, dataset_id: str) -> DatasetManifest:
        for manifest in self.datasets:
            if manifest.dataset_id == dataset_id:
                return manifest
        raise ValidationError(f"unknown dataset {dataset_id!r}")


def _round_half_up(x: Fraction) -> int:
    return int(x + Fraction(1, 2))


def generate_split(
    manifest: DatasetManifest,
    seed: int | None = None,
    test_ratio: float | None = None,
    val_ratio: float | None = None,
) -> dict[str, str]:
    """Seeded shuffle of the sorted image ids into test/val/train buckets.

    Counts follow round-half-up in exact decimal arithmetic: test first from
    the full set, then val from the remainder. Provided splits pass through
    untouched.
    """
    if manifest.split.mode == "provided":
        if manifest.split.assignment is None:
            raise ValidationError(f"{manifest.dataset_id}: provided split lacks an assignment")
        return dict(manifest.split.assignment)
    seed = manifest.split.seed if seed is None else seed
    if seed is None:
        raise ValidationError(f"{manifest.dataset_id}: generated split requires a seed")
    test_ratio = manifest.split.test_ratio if test_ratio is None else test_ratio
    val_ratio = manifest.split.val_ratio if val_ratio is None else val_ratio

    ids = sorted(manifest.image_ids())
    n = len(ids)
    if n < 3:
        raise SizeError(f"{manifest.dataset_id}: need at least 3 images to split, got {n}")
    n_test = _round_half_up(Fraction(str(test_ratio)) * n)
    n_val = _round_half_up(Fraction(str(val_ratio)) * (n - n_test))
    rng = random.Random(seed)
    rng.shuffle(ids)
    assignment = {i: "test" for i in ids[:n_test]}
    assignment.update({i: "val" for i in ids[n_test : n_test + n_val]})
    assignment.update({i: "train" for i in ids[n_test + n_val :]})
    return assignment


def materialize_split(manifest: DatasetManifest) -> None:
    manifest.split.assignment = generate_split(manifest)
    manifest.validate()


def combined_style(tags: list[str]) -> str:
    if all(t == "coarse" for t in tags):
        return "coarse"
    if all(t == "fine" for t in tags):
        return "fine"
    return "mixed"


def combination_id(members) -> str:
    return "+".join(sorted(members))


def enumerate_combinations(
    manifests: list[DatasetManifest], held_out: set[str] | None = None
) -> list[ComboSpec]:
    """Every non-empty subset of the non-held-out datasets.

    Ordered by (total training images, canonical id), the x-axis order of
    the leave-one-out plots.
    """
    held_out = held_out or set()
    remaining = sorted(m.dataset_id for m in manifests if m.dataset_id not in held_out)
    if not remaining:
        raise ArityError("no datasets remain after removing the held-out set")
    for manifest in manifests:
        if manifest.split.assignment is None:
            materialize_split(manifest)
    by_id = {m.dataset_id: m for m in manifests}
    combos = []
    for size in range(1, len(remaining) + 1):
        for members in itertools.combinations(remaining, size):
            tags = sorted(by_id[d].style for d in members)
            combos.append(
                ComboSpec(
                    combination_id=combination_id(members),
                    members=list(members),
                    total_training_images=sum(by_id[d].train_size() for d in members),
                    style_composition=tags,
                    style=combined_style(tags),
                )
            )
    combos.sort(key=lambda c: (c.total_training_images, c.combination_id))
    return combos


def build_plan(
    manifests: list[DatasetManifest],
    held_out: list[str] | None = None,
    replicate_seeds: list[int] | None = None,
) -> ExperimentPlan:
    held_out = list(held_out or [])
    known = {m.dataset_id for m in manifests}
    unknown = set(held_out) - known
    if unknown:
        raise ValidationError(f"held-out datasets not in the manifest set: {sorted(unknown)}")
    for manifest in manifests:
        if manifest.split.assignment is None:
            materialize_split(manifest)
        manifest.validate()
    return ExperimentPlan(
        datasets=list(manifests),
        combinations=enumerate_combinations(manifests, set(held_out)),
        held_out=sorted(held_out),
        replicate_seeds=list(replicate_seeds or [0]),
    )


# --- scenario and strategy reports --------------------------------------------


@dataclass
class ScenarioRow:
    combination_id: str
    total_training_images: int
    style: str
    n_replicates: int
    mean: float | None
    min: float | None
    max: float | None
    best: bool = False
    worst: bool = False
    missing: bool = False

    @property
    def mark(self) -> str:
        return "*" if self.best else "." if self.worst else ""


@dataclass
class ScenarioReport:
    test_dataset: str
    metric: str
    lesion: str | None
    rows: list[ScenarioRow]


def scenario_table(
    plan: ExperimentPlan,
    records: list[MetricRecord],
    test_dataset: str,
    metric: str = "dice",
    lesion: str | None = None,
    allow_missing: bool = False,
) -> ScenarioReport:
    """Leave-one-out table for one held-out test set.

    Each row is a training combination with mean/min/max over replicate
    seeds (per-seed values are averaged across lesions unless one lesion is
    selected). Best row is starred, worst dotted. Missing cells raise a
    join error unless ``allow_missing``, in which case they are flagged.
    """
    selected = [
        r
        for r in records
        if r.test_dataset == test_dataset
        and r.metric == metric
        and (lesion is None or r.lesion == lesion)
    ]
    by_combo: dict[str, list[MetricRecord]] = {}
    for record in selected:
        by_combo.setdefault(record.combination_id, []).append(record)

    missing = [c.combination_id for c in plan.combinations if c.combination_id not in by_combo]
    if missing and not allow_missing:
        cells = ", ".join(f"({c}, {test_dataset})" for c in missing)
        raise JoinError(f"records missing for cells: {cells}")

    rows = []
    for combo in plan.combinations:
        combo_records = by_combo.get(combo.combination_id)
        if not combo_records:
            rows.append(
                ScenarioRow(
                    combination_id=combo.combination_id,
                    total_training_images=combo.total_training_images,
                    style=combo.style,
                    n_replicates=0,
                    mean=None,
                    min=None,
                    max=None,
                    missing=True,
                )
            )
            continue
        by_seed: dict[int, list[float]] = {}
        for record in combo_records:
            by_seed.setdefault(record.replicate_seed, []).append(record.value)
        per_seed = [float(np.mean(vals)) for _, vals in sorted(by_seed.items())]
        rows.append(
            ScenarioRow(
                combination_id=combo.combination_id,
                total_training_images=combo.total_training_images,
                style=combo.style,
                n_replicates=len(per_seed),
                mean=float(np.mean(per_seed)),
                min=float(np.min(per_seed)),
                max=float(np.max(per_seed)),
            )
        )
    present = [r for r in rows if not r.missing]
    if present:
        best = max(r.mean for r in present)
        worst = min(r.mean for r in present)
        for row in present:
            row.best = row.mean == best
            row.worst = row.mean == worst
    return ScenarioReport(test_dataset=test_dataset, metric=metric, lesion=lesion, rows=rows)


@dataclass
class StrategyRow:
    combination_id: str
    scores: dict[str, float]
    improves: list[str]  # strategies strictly beating the baseline


@dataclass
class StrategyReport:
    metric: str
    baseline: str
    strategies: list[str]
    rows: list[StrategyRow]


def strategy_comparison(
    records_by_strategy: dict[str, list[MetricRecord]],
    metric: str = "dice",
    baseline: str = "baseline",
) -> StrategyReport:
    """Per-combination average score per strategy, flagged against baseline.

    Scores average across test datasets, lesions and replicate seeds, one
    value per (combination, strategy). Every strategy must cover the same
    combination set.
    """
    if baseline not in records_by_strategy:
        raise JoinError(f"no records for baseline strategy {baseline!r}")
    strategies = sorted(records_by_strategy)
    coverage = {
        s: {r.combination_id for r in records_by_strategy[s] if r.metric == metric}
        for s in strategies
    }
    combos = coverage[baseline]
    for strategy, covered in coverage.items():
        if covered != combos:
            diff = sorted(combos.symmetric_difference(covered))
            raise JoinError(f"strategy {strategy!r} coverage differs on combinations: {diff}")
    if not combos:
        raise ArityError(f"no {metric!r} records to compare")

    rows = []
    for combo in sorted(combos):
        scores = {}
        for strategy in strategies:
            values = [
                r.value
                for r in records_by_strategy[strategy]
                if r.combination_id == combo and r.metric == metric
            ]
            scores[strategy] = float(np.mean(values))
        improves = [
            s for s in strategies if s != baseline and scores[s] > scores[baseline]
        ]
        rows.append(StrategyRow(combination_id=combo, scores=scores, improves=improves))
    return StrategyReport(metric=metric, baseline=baseline, strategies=strategies, rows=rows)


# --- JSON serialization --------------------------------------------------------


def _split_to_obj(split: SplitSpec) -> dict:
    obj: dict = {"mode": split.mode}
    if split.mode == "generated":
        obj.update(seed=split.seed, test_ratio=split.test_ratio, val_ratio=split.val_ratio)
    if split.assignment is not None:
        obj["assignment"] = dict(sorted(split.assignment.items()))
    return obj


def _split_from_obj(obj: dict) -> SplitSpec:
    return SplitSpec(
        mode=obj["mode"],
        assignment=obj.get("assignment"),
        seed=obj.get("seed"),
        test_ratio=obj.get("test_ratio", DEFAULT_TEST_RATIO),
        val_ratio=obj.get("val_ratio", DEFAULT_VAL_RATIO),
    )


def manifest_to_obj(manifest: DatasetManifest) -> dict:
    return {
        "dataset_id": manifest.dataset_id,
        "style": manifest.style,
        "lesions": list(manifest.lesions),
        "split": _split_to_obj(manifest.split),
        "images": [
            {
                "image_id": rec.image_id,
                "image": rec.image,
                "masks": dict(sorted(rec.masks.items())),
                "predictions": dict(sorted(rec.predictions.items())),
            }
            for rec in manifest.images
        ],
    }


def manifest_from_obj(obj: dict, root: Path | None = None) -> DatasetManifest:
    manifest = DatasetManifest(
        dataset_id=obj["dataset_id"],
        style=obj.get("style", "fine"),
        lesions=list(obj.get("lesions", [])),
        images=[
            ImageRecord(
                image_id=rec["image_id"],
                image=rec.get("image"),
                masks=dict(rec.get("masks", {})),
                predictions=dict(rec.get("predictions", {})),
            )
            for rec in obj.get("images", [])
        ],
        split=_split_from_obj(obj["split"]),
        root=root,
    )
    manifest.validate()
    return manifest


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    return manifest_from_obj(json.loads(path.read_text()), root=path.parent)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest_to_obj(manifest), indent=2, sort_keys=True) + "\n")


def plan_to_obj(plan: ExperimentPlan) -> dict:
    return {
        "datasets": [manifest_to_obj(m) for m in plan.datasets],
        "held_out": list(plan.held_out),
        "replicate_seeds": list(plan.replicate_seeds),
        "combinations": [
            {
                "combination_id": c.combination_id,
                "members": list(c.members),
                "total_training_images": c.total_training_images,
                "style_composition": list(c.style_composition),
                "style": c.style,
            }
            for c in plan.combinations
        ],
    }


def plan_from_obj(obj: dict, root: Path | None = None) -> ExperimentPlan:
    return ExperimentPlan(
        datasets=[manifest_from_obj(m, root=root) for m in obj["datasets"]],
        combinations=[
            ComboSpec(
                combination_id=c["combination_id"],
                members=list(c["members"]),
                total_training_images=c["total_training_images"],
                style_composition=list(c["style_composition"]),
                style=c["style"],
            )
            for c in obj["combinations"]
        ],
        held_out=list(obj.get("held_out", [])),
        replicate_seeds=list(obj.get("replicate_seeds", [])),
    )


def load_plan(path: str | Path) -> ExperimentPlan:
    path = Path(path)
    return plan_from_obj(json.loads(path.read_text()), root=path.parent)


def save_plan(plan: ExperimentPlan, path: str | Path) -> None:
    Path(path).write_text(json.dumps(plan_to_obj(plan), indent=2, sort_keys=True) + "\n")
