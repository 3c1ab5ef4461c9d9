#!/usr/bin/env python3
"""End-to-end rehearsal of the dataset-combination study on synthetic data.

Generates three synthetic datasets (two finely labelled, one coarse), holds
the first fine one out for testing, trains nothing: predictor quality per
training combination is simulated as rising with the style-weighted size of
the training set. Produces the same artifacts a real study would: dataset
manifests, a plan JSON, a metric records CSV and a leave-one-out scenario
table.

Usage: python scripts/run_rehearsal.py --out runs/rehearsal
"""

import argparse
import json
import shutil
import sys
from pathlib import Path

from seg_genlab.cli import dispatch
from seg_genlab.planning import load_plan
from seg_genlab.rasters import load_mask, save_probability_map
from seg_genlab.synth import generate_prediction

DATASETS = {
    # id: (style, coarseness, count_mean, area_mean, seed)
    "SYA": ("fine", "fine", 8, 10, 21),
    "SYB": ("fine", "fine", 8, 10, 22),
    "SYC": ("coarse", "coarse", 2, 160, 23),
}
HELD_OUT = "SYA"
REPLICATE_SEEDS = [0, 1, 2, 3]


def synth_config(dataset_id: str) -> dict:
    style, coarseness, count_mean, area_mean, seed = DATASETS[dataset_id]
    return {
        "dataset_id": dataset_id,
        "style": style,
        "n_images": 16,
        "image_size": 96,
        "seed": seed,
        "coarseness": coarseness,
        "predictor_quality": 1.0,
        "lesions": {"EX": {"count_mean": count_mean, "area_mean": area_mean}},
        "split": {"seed": 11},
    }


def check(code: int) -> None:
    if code != 0:
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/rehearsal", help="output directory")
    args = parser.parse_args()
    out = Path(args.out)
    manifest_dir = out / "manifests"
    manifest_dir.mkdir(parents=True, exist_ok=True)

    for dataset_id in DATASETS:
        config_path = out / f"{dataset_id}.synth.json"
        config_path.write_text(json.dumps(synth_config(dataset_id), indent=2))
        check(dispatch(["synth", "--config", str(config_path), "--out", str(out / dataset_id)]))
        shutil.copy(out / dataset_id / "manifest.json", manifest_dir / f"{dataset_id}.json")

    plan_path = out / "plan.json"
    check(dispatch([
        "plan", "--datasets", str(manifest_dir), "--out", str(plan_path),
        "--hold-out", HELD_OUT, "--seeds", ",".join(map(str, REPLICATE_SEEDS)),
    ]))
    plan = load_plan(plan_path)

    held = plan.dataset(HELD_OUT)
    test_ids = set(held.split_ids("test"))
    truth_dir = out / "truth"
    truth_dir.mkdir(exist_ok=True)
    masks = []
    for rec in held.images:
        if rec.image_id in test_ids:
            source = out / HELD_OUT / rec.masks["EX"]
            shutil.copy(source, truth_dir / source.name)
            masks.append(load_mask(truth_dir / source.name))

    fine_total = sum(
        plan.dataset(d.dataset_id).train_size()
        for d in plan.datasets
        if d.style == "fine" and d.dataset_id != HELD_OUT
    )
    all_total = sum(
        plan.dataset(d.dataset_id).train_size()
        for d in plan.datasets
        if d.dataset_id != HELD_OUT
    )

    records_path = out / "records.csv"
    if records_path.exists():
        records_path.unlink()
    for combo in plan.combinations:
        fine_n = sum(
            plan.dataset(d).train_size() for d in combo.members
            if plan.dataset(d).style == "fine"
        )
        quality = 0.25 + 0.65 * fine_n / fine_total \
            + 0.05 * combo.total_training_images / all_total
        print(f"combination {combo.combination_id}: simulated predictor quality {quality:.3f}")
        for seed in REPLICATE_SEEDS:
            pred_dir = out / "preds" / combo.combination_id / str(seed)
            pred_dir.mkdir(parents=True, exist_ok=True)
            for mask in masks:
                save_probability_map(generate_prediction(mask, quality, seed), pred_dir)
            check(dispatch([
                "metrics", "--pred", str(pred_dir), "--truth", str(truth_dir),
                "--lesions", "EX", "--metric", "dice,aupr",
                "--out", str(records_path), "--append",
                "--combination-id", combo.combination_id,
                "--test-dataset", HELD_OUT, "--replicate-seed", str(seed),
            ]))

    check(dispatch([
        "report", "--scenario", HELD_OUT, "--plan", str(plan_path),
        "--records", str(records_path),
        "--out", str(out / "scenario.csv"), "--json", str(out / "scenario.json"),
    ]))
    print(f"\nscenario table:\n{(out / 'scenario.csv').read_text()}")


if __name__ == "__main__":
    main()
