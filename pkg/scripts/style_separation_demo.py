#!/usr/bin/env python3
"""Labelling-style separation on synthetic datasets.

Builds one finely and one coarsely labelled synthetic dataset, summarizes
both in (log mean area, log count) space and prints the pairwise relation,
the medians/IQRs and the histogram CSV paths for plotting.

Usage: python scripts/style_separation_demo.py --out runs/styles
"""

import argparse
import json
import sys
from pathlib import Path

from seg_genlab.characterization import compare_styles, lesion_stats, style_summary
from seg_genlab.cli import dispatch
from seg_genlab.rasters import load_mask


def check(code: int) -> None:
    if code != 0:
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/styles")
    parser.add_argument("--images", type=int, default=60)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    configs = {
        "FINE": {"coarseness": "fine", "count_mean": 40, "area_mean": 8, "seed": 1},
        "COAR": {"coarseness": "coarse", "count_mean": 4, "area_mean": 400, "seed": 2},
    }
    summaries = {}
    for dataset_id, knobs in configs.items():
        config = {
            "dataset_id": dataset_id,
            "style": "fine" if knobs["coarseness"] == "fine" else "coarse",
            "n_images": args.images,
            "image_size": 160,
            "seed": knobs["seed"],
            "coarseness": knobs["coarseness"],
            "predictor_quality": 1.0,
            "lesions": {"EX": {"count_mean": knobs["count_mean"], "area_mean": knobs["area_mean"]}},
            "split": {"seed": 0},
        }
        config_path = out / f"{dataset_id}.synth.json"
        config_path.write_text(json.dumps(config, indent=2))
        check(dispatch(["synth", "--config", str(config_path), "--out", str(out / dataset_id)]))
        check(dispatch([
            "characterize", "--masks", str(out / dataset_id / "masks"), "--lesion", "EX",
            "--out", str(out / f"{dataset_id}.stats.csv"),
            "--hist", str(out / f"{dataset_id}.hist.csv"),
        ]))
        stats = [
            lesion_stats(load_mask(p))
            for p in sorted((out / dataset_id / "masks").glob("*.EX.png"))
        ]
        summaries[dataset_id] = style_summary(stats, dataset_id=dataset_id)

    fine, coarse = summaries["FINE"], summaries["COAR"]
    print(f"\nrelation(COAR vs FINE): {compare_styles(coarse, fine)}")
    for summary in (fine, coarse):
        print(
            f"{summary.dataset_id}: median log10(count)={summary.median_log_count:.3f} "
            f"(IQR {summary.iqr_log_count:.3f}), "
            f"median log10(area)={summary.median_log_area:.3f} "
            f"(IQR {summary.iqr_log_area:.3f}), n={summary.n_images}"
        )
    print(f"histogram CSVs for plotting are under {out}")


if __name__ == "__main__":
    main()
