"""`seg-genlab`: one binary for the whole pipeline.

synth/ingest -> characterize -> plan -> average/ensemble -> metrics ->
report. All outputs are deterministic on identical inputs; provenance
footers are opt-in via --meta. Exit codes: 0 success, 1 validation or
parse error, 2 data-integrity error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .archive import read_archive, write_archive
from .averaging import AveragingRequest, average_weights
from .characterization import (
    lesion_stats,
    load_grades_csv,
    quality_distribution,
    style_summary,
    HistogramSpec,
)
from .ensemble import EnsembleSet, ensemble_average
from .errors import DataError, ValidationError
from .metrics import (
    MetricRecord,
    evaluate_dataset,
    read_records_csv,
    read_strategy_records_csv,
    write_records_csv,
)
from .planning import (
    build_plan,
    load_manifest,
    load_plan,
    save_manifest,
    save_plan,
    scenario_table,
    strategy_comparison,
)
from .rasters import (
    LESION_CODES,
    load_mask,
    load_probability_map,
    prob_filename,
    save_probability_map,
)
from .synth import generate_dataset, load_synth_spec


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through the exit-1 error family."""

    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _require(path: str | Path, kind: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"{kind} {p} does not exist")
    return p


def _pmap(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _meta_line(args) -> str | None:
    if not getattr(args, "meta", False):
        return None
    import datetime
    import socket

    return (
        f"seg-genlab {__version__} | {args.command} | "
        f"{socket.gethostname()} | {datetime.datetime.now().isoformat(timespec='seconds')}"
    )


def _write_csv(path: str | Path, header: list[str], rows: list[list], meta: str | None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
        if meta:
            fh.write(f"# {meta}\n")


def _write_json(path: str | Path, obj: dict, meta: str | None) -> None:
    if meta:
        obj = {**obj, "_meta": meta}
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- subcommands ---------------------------------------------------------------


def _cmd_synth(args) -> None:
    spec = load_synth_spec(_require(args.config, "config file"))
    manifest = generate_dataset(spec, args.out)
    save_manifest(manifest, Path(args.out) / "manifest.json")
    print(f"wrote {spec.n_images} images for {spec.dataset_id} under {args.out}")


def _cmd_characterize(args) -> None:
    masks_dir = _require(args.masks, "masks directory")
    paths = sorted(masks_dir.glob(f"*.{args.lesion}.png"))
    if not paths:
        raise ValidationError(f"no *.{args.lesion}.png masks under {masks_dir}")
    stats = _pmap(lambda p: lesion_stats(load_mask(p), args.connectivity), paths, args.jobs)
    meta = _meta_line(args)
    _write_csv(
        args.out,
        ["image_id", "lesion", "lesion_count", "mean_area", "total_area"],
        [
            [s.image_id, s.lesion, s.lesion_count,
             "" if s.mean_area is None else repr(s.mean_area), s.total_area]
            for s in stats
        ],
        meta,
    )
    if args.hist:
        summary = style_summary(stats, bins=HistogramSpec(bin_width=args.bin_width))
        rows = []
        if not summary.empty:
            for i, area_lo in enumerate(summary.log_area_edges[:-1]):
                for j, count_lo in enumerate(summary.log_count_edges[:-1]):
                    rows.append([repr(round(float(area_lo), 10)),
                                 repr(round(float(count_lo), 10)),
                                 int(summary.histogram[i, j])])
        _write_csv(args.hist, ["bin_log_area_lo", "bin_log_count_lo", "count"], rows, meta)
    print(f"characterized {len(stats)} masks for lesion {args.lesion}")


def _cmd_quality(args) -> None:
    grades = load_grades_csv(_require(args.grades, "grades file"))
    dist = quality_distribution(grades, dataset_id=args.dataset)
    _write_csv(
        args.out,
        ["dataset_id", "grade", "fraction"],
        [[dist.dataset_id, g, repr(f)] for g, f in dist.fractions.items()],
        _meta_line(args),
    )
    print(f"quality distribution over {len(grades)} grades written to {args.out}")


def _cmd_plan(args) -> None:
    datasets_dir = _require(args.datasets, "manifest directory")
    paths = sorted(datasets_dir.glob("*.json"))
    if not paths:
        raise ValidationError(f"no manifest JSON files under {datasets_dir}")
    manifests = [load_manifest(p) for p in paths]
    plan = build_plan(manifests, held_out=args.hold_out, replicate_seeds=args.seeds)
    save_plan(plan, args.out)
    print(
        f"plan over {len(plan.datasets)} datasets: {len(plan.combinations)} combinations, "
        f"held out {plan.held_out or 'none'}"
    )


def _cmd_average(args) -> None:
    paths = [_require(p, "input archive") for p in args.inputs]
    base_path = _require(args.base, "base archive") if args.base else None
    inputs = [read_archive(p) for p in paths]
    base = read_archive(base_path) if base_path else None
    result = average_weights(
        AveragingRequest(inputs=inputs, mode=args.mode, scope=args.scope, base=base)
    )
    write_archive(result, args.out)
    print(f"averaged {len(inputs)} archives ({args.mode}, scope={args.scope}) -> {args.out}")


def _cmd_ensemble(args) -> None:
    dirs = [_require(d, "prediction directory") for d in args.pred_dirs]
    if len(dirs) < 1:
        raise ValidationError("at least one prediction directory is required")
    names = [sorted(p.name for p in d.glob("*.prob.png")) for d in dirs]
    for d, found in zip(dirs[1:], names[1:]):
        if found != names[0]:
            diff = sorted(set(found).symmetric_difference(names[0]))
            raise DataError(f"{d} does not pair with {dirs[0]}: {diff}")
    if not names[0]:
        raise ValidationError(f"no *.prob.png files under {dirs[0]}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def _one(name: str) -> None:
        members = [load_probability_map(d / name) for d in dirs]
        averaged = ensemble_average(
            EnsembleSet(members=members, member_ids=[str(d) for d in dirs])
        )
        save_probability_map(averaged, out)

    _pmap(_one, names[0], args.jobs)
    print(f"ensembled {len(dirs)} models over {len(names[0])} maps -> {out}")


def _cmd_metrics(args) -> None:
    pred_dir = _require(args.pred, "prediction directory")
    truth_dir = _require(args.truth, "truth directory")
    lesions = [code.strip() for code in args.lesions.split(",") if code.strip()]
    metrics = [m.strip() for m in args.metric.split(",") if m.strip()]
    records = []
    for lesion in lesions:
        truth_paths = sorted(truth_dir.glob(f"*.{lesion}.png"))
        if not truth_paths:
            raise ValidationError(f"no *.{lesion}.png masks under {truth_dir}")
        truths = _pmap(load_mask, truth_paths, args.jobs)
        missing = [
            prob_filename(t.image_id, lesion)
            for t in truths
            if not (pred_dir / prob_filename(t.image_id, lesion)).exists()
        ]
        if missing:
            raise DataError(f"predictions missing under {pred_dir}: {missing}")
        preds = _pmap(
            lambda t: load_probability_map(pred_dir / prob_filename(t.image_id, lesion)),
            truths,
            args.jobs,
        )
        pairs = list(zip(preds, truths))
        for metric in metrics:
            result = evaluate_dataset(pairs, metric, args.agg, args.dice_threshold)
            records.append(
                MetricRecord(
                    combination_id=args.combination_id,
                    test_dataset=args.test_dataset,
                    lesion=lesion,
                    replicate_seed=args.replicate_seed,
                    metric=metric,
                    value=result.value,
                    n_images=result.n_images,
                    degenerate_images=result.degenerate_images,
                )
            )
    write_records_csv(records, args.out, append=args.append, meta=_meta_line(args))
    for r in records:
        print(f"{r.lesion} {r.metric} [{args.agg}] = {r.value:.6f} ({r.n_images} images)")


def _scenario_rows(report) -> list[list]:
    rows = []
    for r in report.rows:
        rows.append(
            [
                r.combination_id,
                r.total_training_images,
                r.style,
                r.n_replicates,
                "" if r.mean is None else repr(r.mean),
                "" if r.min is None else repr(r.min),
                "" if r.max is None else repr(r.max),
                r.mark,
                "missing" if r.missing else "",
            ]
        )
    return rows


def _cmd_report(args) -> None:
    meta = _meta_line(args)
    if args.strategies:
        grouped = read_strategy_records_csv(_require(args.records, "records file"))
        report = strategy_comparison(grouped, metric=args.metric, baseline=args.baseline)
        header = ["combination_id", *report.strategies, "improves"]
        rows = [
            [row.combination_id]
            + [repr(row.scores[s]) for s in report.strategies]
            + ["+".join(row.improves)]
            for row in report.rows
        ]
        _write_csv(args.out, header, rows, meta)
        if args.json:
            _write_json(
                args.json,
                {
                    "metric": report.metric,
                    "baseline": report.baseline,
                    "rows": [
                        {"combination_id": r.combination_id, "scores": r.scores,
                         "improves": r.improves}
                        for r in report.rows
                    ],
                },
                meta,
            )
        print(f"strategy comparison over {len(report.rows)} combinations -> {args.out}")
        return

    plan = load_plan(_require(args.plan, "plan file"))
    records = read_records_csv(_require(args.records, "records file"))
    report = scenario_table(
        plan,
        records,
        test_dataset=args.scenario,
        metric=args.metric,
        lesion=args.lesion,
        allow_missing=args.allow_missing,
    )
    _write_csv(
        args.out,
        ["combination_id", "total_training_images", "style", "n_replicates",
         "mean", "min", "max", "mark", "status"],
        _scenario_rows(report),
        meta,
    )
    if args.json:
        _write_json(
            args.json,
            {
                "test_dataset": report.test_dataset,
                "metric": report.metric,
                "lesion": report.lesion,
                "rows": [
                    {
                        "combination_id": r.combination_id,
                        "total_training_images": r.total_training_images,
                        "style": r.style,
                        "n_replicates": r.n_replicates,
                        "mean": r.mean,
                        "min": r.min,
                        "max": r.max,
                        "best": r.best,
                        "worst": r.worst,
                        "missing": r.missing,
                    }
                    for r in report.rows
                ],
            },
            meta,
        )
    best = [r.combination_id for r in report.rows if r.best]
    print(f"scenario {args.scenario}: {len(report.rows)} rows, best {best} -> {args.out}")


# --- parser --------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="seg-genlab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"seg-genlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: _Parser) -> None:
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel workers for per-image processing")
        p.add_argument("--meta", action="store_true",
                       help="append a provenance footer to outputs")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="synth dataset config JSON")
    p.add_argument("--out", required=True, help="output dataset directory")
    common(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("characterize", help="per-image lesion stats and style histogram")
    p.add_argument("--masks", required=True, help="directory of mask PNGs")
    p.add_argument("--lesion", required=True, choices=LESION_CODES, help="lesion code")
    p.add_argument("--out", required=True, help="per-image stats CSV")
    p.add_argument("--hist", help="joint log-log histogram CSV")
    p.add_argument("--connectivity", type=int, default=8, choices=(4, 8),
                   help="component adjacency")
    p.add_argument("--bin-width", type=float, default=0.25, help="log10 histogram bin width")
    common(p)
    p.set_defaults(func=_cmd_characterize)

    p = sub.add_parser("quality", help="normalize external image-quality grades")
    p.add_argument("--grades", required=True, help="CSV with image_id,grade columns")
    p.add_argument("--out", required=True, help="distribution CSV")
    p.add_argument("--dataset", default="", help="dataset id recorded in the output")
    common(p)
    p.set_defaults(func=_cmd_quality)

    p = sub.add_parser("plan", help="enumerate training combinations from manifests")
    p.add_argument("--datasets", required=True, help="directory of dataset manifest JSONs")
    p.add_argument("--out", required=True, help="plan JSON path")
    p.add_argument("--hold-out", action="append", default=[],
                   help="dataset id to exclude from training (repeatable)")
    p.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")],
                   default=[0], help="comma-separated replicate seeds")
    common(p)
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("average", help="average checkpoint archives (SWA / soup)")
    p.add_argument("--mode", required=True, choices=("swa", "soup"))
    p.add_argument("--scope", default="full", choices=("encoder", "decoder", "full"))
    p.add_argument("--base", help="archive supplying out-of-scope tensors (default: first input)")
    p.add_argument("--out", required=True, help="output archive path")
    p.add_argument("inputs", nargs="+", help="input archive paths")
    common(p)
    p.set_defaults(func=_cmd_average)

    p = sub.add_parser("ensemble", help="average probability maps across models")
    p.add_argument("--out", required=True, help="output prediction directory")
    p.add_argument("pred_dirs", nargs="+", help="prediction directories, paired by filename")
    common(p)
    p.set_defaults(func=_cmd_ensemble)

    p = sub.add_parser("metrics", help="evaluate predictions against ground truth")
    p.add_argument("--pred", required=True, help="prediction directory (*.prob.png)")
    p.add_argument("--truth", required=True, help="ground-truth directory (*.png)")
    p.add_argument("--lesions", default=",".join(LESION_CODES),
                   help="comma-separated lesion codes")
    p.add_argument("--metric", default="dice,aupr", help="comma-separated: dice,aupr")
    p.add_argument("--agg", default="micro", choices=("micro", "macro"))
    p.add_argument("--dice-threshold", type=float, default=0.5,
                   help="binarization threshold for Dice")
    p.add_argument("--out", required=True, help="records CSV path")
    p.add_argument("--append", action="store_true", help="append to an existing records CSV")
    p.add_argument("--combination-id", default="", help="training combination label")
    p.add_argument("--test-dataset", default="", help="test dataset label")
    p.add_argument("--replicate-seed", type=int, default=0, help="replicate label")
    common(p)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("report", help="scenario tables and strategy comparisons")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--scenario", help="held-out dataset id for a leave-one-out table")
    group.add_argument("--strategies", action="store_true",
                       help="compare strategies against the baseline")
    p.add_argument("--plan", help="plan JSON (scenario mode)")
    p.add_argument("--records", required=True, help="metric records CSV")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--json", help="also write the report as JSON")
    p.add_argument("--metric", default="dice")
    p.add_argument("--lesion", help="restrict to one lesion code")
    p.add_argument("--baseline", default="baseline", help="baseline strategy name")
    p.add_argument("--allow-missing", action="store_true",
                   help="flag missing plan cells instead of failing")
    common(p)
    p.set_defaults(func=_cmd_report)
    return parser


def _print_error(exc: Exception) -> None:
    message = " ".join(str(exc).split())
    print(f"seg-genlab: error: {exc.__class__.__name__}: {message}", file=sys.stderr)


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except ValidationError as exc:
        _print_error(exc)
        return 1
    try:
        if args.command == "report" and args.scenario and not args.plan:
            raise ValidationError("--scenario requires --plan")
        args.func(args)
    except ValidationError as exc:
        _print_error(exc)
        return 1
    except (DataError, OSError) as exc:
        _print_error(exc)
        return 2
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
