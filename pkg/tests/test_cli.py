import csv
import json

import cv2
import numpy as np
import pytest

from seg_genlab.cli import build_parser, dispatch


def _run(*argv):
    return dispatch(list(argv))


def _synth_config(tmp_path, dataset_id="SYA", n_images=8, seed=3, quality=0.9,
                  count_mean=5, area_mean=10, style="fine", coarseness="fine"):
    config = {
        "dataset_id": dataset_id,
        "style": style,
        "n_images": n_images,
        "image_size": 48,
        "seed": seed,
        "coarseness": coarseness,
        "predictor_quality": quality,
        "lesions": {"EX": {"count_mean": count_mean, "area_mean": area_mean}},
        "split": {"seed": 1},
    }
    path = tmp_path / f"{dataset_id}.synth.json"
    path.write_text(json.dumps(config))
    return path


@pytest.fixture
def synth_dataset(tmp_path):
    config = _synth_config(tmp_path)
    out = tmp_path / "SYA"
    assert _run("synth", "--config", str(config), "--out", str(out)) == 0
    return out


# --- parser hygiene ---------------------------------------------------------------


def test_help_documents_every_flag(capsys):
    parser = build_parser()
    subparsers = parser._subparsers._group_actions[0].choices
    assert set(subparsers) == {
        "synth", "characterize", "quality", "plan", "average", "ensemble", "metrics", "report",
    }
    for name, sub in subparsers.items():
        assert _run(name, "--help") == 0
        help_text = capsys.readouterr().out
        for action in sub._actions:
            for option in action.option_strings:
                if option.startswith("--"):
                    assert option in help_text, f"{name}: {option} undocumented"


def test_unknown_flag_exits_1(capsys):
    assert _run("plan", "--bogus") == 1
    err = capsys.readouterr().err
    assert "error" in err


def test_missing_subcommand_exits_1():
    assert _run() == 1


def test_missing_input_path_exits_1(tmp_path):
    assert _run("quality", "--grades", str(tmp_path / "nope.csv"),
                "--out", str(tmp_path / "o.csv")) == 1


# --- synth / characterize / quality -------------------------------------------------


def test_synth_writes_dataset(synth_dataset):
    assert (synth_dataset / "manifest.json").exists()
    assert len(list((synth_dataset / "masks").glob("*.EX.png"))) == 8
    assert len(list((synth_dataset / "predictions").glob("*.EX.prob.png"))) == 8


def test_characterize_outputs(tmp_path, synth_dataset):
    stats_csv = tmp_path / "stats.csv"
    hist_csv = tmp_path / "hist.csv"
    code = _run(
        "characterize", "--masks", str(synth_dataset / "masks"), "--lesion", "EX",
        "--out", str(stats_csv), "--hist", str(hist_csv),
    )
    assert code == 0
    rows = list(csv.DictReader(stats_csv.open()))
    assert len(rows) == 8
    assert set(rows[0]) == {"image_id", "lesion", "lesion_count", "mean_area", "total_area"}
    hist_rows = list(csv.DictReader(hist_csv.open()))
    assert set(hist_rows[0]) == {"bin_log_area_lo", "bin_log_count_lo", "count"}
    contributing = sum(1 for r in rows if int(r["lesion_count"]) > 0)
    assert sum(int(r["count"]) for r in hist_rows) == contributing


def test_quality_distribution_csv(tmp_path):
    grades = tmp_path / "grades.csv"
    grades.write_text("image_id,grade\nA,Good\nB,Good\nC,Usable\nD,Reject\n")
    out = tmp_path / "dist.csv"
    assert _run("quality", "--grades", str(grades), "--out", str(out), "--dataset", "IDR") == 0
    rows = {r["grade"]: float(r["fraction"]) for r in csv.DictReader(out.open())}
    assert rows == {"Good": 0.5, "Usable": 0.25, "Reject": 0.25}


def test_quality_bad_grade_exits_1(tmp_path, capsys):
    grades = tmp_path / "grades.csv"
    grades.write_text("image_id,grade\nA,OK\n")
    assert _run("quality", "--grades", str(grades), "--out", str(tmp_path / "o.csv")) == 1
    assert "ParseError" in capsys.readouterr().err


# --- plan ------------------------------------------------------------------------------


def _write_manifests(tmp_path, sizes):
    mdir = tmp_path / "manifests"
    mdir.mkdir(exist_ok=True)
    for dataset_id, n in sizes.items():
        obj = {
            "dataset_id": dataset_id,
            "style": "fine",
            "lesions": ["EX"],
            "split": {"mode": "generated", "seed": 0},
            "images": [{"image_id": f"{dataset_id}_{i:03d}"} for i in range(n)],
        }
        (mdir / f"{dataset_id}.json").write_text(json.dumps(obj))
    return mdir


def test_plan_five_manifests_gives_31(tmp_path):
    mdir = _write_manifests(tmp_path, {"IDR": 81, "DDR": 50, "FGA": 60, "RET": 40, "MES": 30})
    out = tmp_path / "plan.json"
    assert _run("plan", "--datasets", str(mdir), "--out", str(out)) == 0
    plan = json.loads(out.read_text())
    assert len(plan["combinations"]) == 31


def test_plan_holdout(tmp_path):
    mdir = _write_manifests(tmp_path, {"A": 10, "B": 10, "C": 10})
    out = tmp_path / "plan.json"
    assert _run("plan", "--datasets", str(mdir), "--out", str(out), "--hold-out", "A") == 0
    plan = json.loads(out.read_text())
    assert len(plan["combinations"]) == 3
    assert all("A" not in c["members"] for c in plan["combinations"])


# --- average ----------------------------------------------------------------------------


def test_average_cli(tmp_path):
    import seg_genlab as sgl

    for i in range(3):
        archive = sgl.TensorArchive(
            tensors={"enc.w": np.full((2, 2), float(i), np.float32),
                     "dec.w": np.full(3, float(10 * i), np.float32)},
            metadata=sgl.ArchiveMetadata(
                model_id=f"m{i}", iteration=100, hyperparam_id=f"h{i}",
                role_prefixes={"encoder": ["enc."], "decoder": ["dec."]},
            ),
        )
        sgl.write_archive(archive, tmp_path / f"m{i}.sgl")
    out = tmp_path / "soup.sgl"
    code = _run(
        "average", "--mode", "soup", "--scope", "encoder", "--out", str(out),
        *(str(tmp_path / f"m{i}.sgl") for i in range(3)),
    )
    assert code == 0
    result = sgl.read_archive(out)
    assert result.tensors["enc.w"].ravel().tolist() == [1.0] * 4
    assert result.tensors["dec.w"].ravel().tolist() == [0.0] * 3  # base = first input


def test_average_mode_violation_exits_1(tmp_path, capsys):
    import seg_genlab as sgl

    for i in range(2):
        archive = sgl.TensorArchive(
            tensors={"w": np.ones(2, np.float32)},
            metadata=sgl.ArchiveMetadata(model_id=f"m{i}", iteration=5, hyperparam_id="same"),
        )
        sgl.write_archive(archive, tmp_path / f"m{i}.sgl")
    code = _run("average", "--mode", "soup", "--out", str(tmp_path / "o.sgl"),
                str(tmp_path / "m0.sgl"), str(tmp_path / "m1.sgl"))
    assert code == 1
    assert "ModeError" in capsys.readouterr().err


def test_average_corrupt_archive_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.sgl"
    bad.write_bytes(b"SGLB1\n" + b"\x00" * 20)
    assert _run("average", "--mode", "soup", "--out", str(tmp_path / "o.sgl"), str(bad)) == 2


# --- ensemble ---------------------------------------------------------------------------


def test_ensemble_cli_pairs_by_filename(tmp_path, rng):
    dirs = []
    values = rng.integers(0, 65536, size=(2, 10, 10)).astype(np.uint16)
    for m, offset in enumerate((values[0], values[1])):
        d = tmp_path / f"model{m}"
        d.mkdir()
        cv2.imwrite(str(d / "img.EX.prob.png"), offset)
        dirs.append(d)
    out = tmp_path / "ens"
    assert _run("ensemble", "--out", str(out), str(dirs[0]), str(dirs[1])) == 0
    merged = cv2.imread(str(out / "img.EX.prob.png"), cv2.IMREAD_UNCHANGED)
    expected = np.round(
        (values[0] / 65535 + values[1] / 65535) / 2 * 65535
    ).astype(np.uint16)
    assert np.array_equal(merged, expected)


def test_ensemble_unpaired_files_exit_2(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    cv2.imwrite(str(a / "one.EX.prob.png"), np.zeros((4, 4), np.uint16))
    cv2.imwrite(str(b / "two.EX.prob.png"), np.zeros((4, 4), np.uint16))
    assert _run("ensemble", "--out", str(tmp_path / "o"), str(a), str(b)) == 2


# --- metrics ----------------------------------------------------------------------------


def test_metrics_cli_on_synth(tmp_path, synth_dataset):
    out = tmp_path / "records.csv"
    code = _run(
        "metrics", "--pred", str(synth_dataset / "predictions"),
        "--truth", str(synth_dataset / "masks"),
        "--lesions", "EX", "--metric", "dice,aupr", "--agg", "micro",
        "--out", str(out), "--combination-id", "SYA", "--test-dataset", "SYA",
    )
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["metric"] for r in rows] == ["dice", "aupr"]
    assert all(0.0 <= float(r["value"]) <= 1.0 for r in rows)
    assert all(r["n_images"] == "8" for r in rows)


def test_metrics_dimension_mismatch_exits_2(tmp_path, capsys):
    truth, pred = tmp_path / "truth", tmp_path / "pred"
    truth.mkdir(), pred.mkdir()
    cv2.imwrite(str(truth / "im.EX.png"), np.zeros((8, 8), np.uint8))
    cv2.imwrite(str(pred / "im.EX.prob.png"), np.zeros((9, 9), np.uint16))
    code = _run("metrics", "--pred", str(pred), "--truth", str(truth),
                "--lesions", "EX", "--out", str(tmp_path / "r.csv"))
    assert code == 2
    assert "ShapeError" in capsys.readouterr().err


def test_metrics_missing_prediction_exits_2(tmp_path):
    truth, pred = tmp_path / "truth", tmp_path / "pred"
    truth.mkdir(), pred.mkdir()
    cv2.imwrite(str(truth / "im.EX.png"), np.zeros((8, 8), np.uint8))
    assert _run("metrics", "--pred", str(pred), "--truth", str(truth),
                "--lesions", "EX", "--out", str(tmp_path / "r.csv")) == 2


# --- report -----------------------------------------------------------------------------


def test_report_strategies(tmp_path):
    records = tmp_path / "records.csv"
    with records.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "combination_id", "test_dataset", "lesion",
                         "replicate_seed", "metric", "value"])
        for strategy, v in (("baseline", 0.5), ("ensemble", 0.6), ("swa_encoder", 0.4)):
            writer.writerow([strategy, "A+B", "T", "EX", 0, "dice", v])
    out = tmp_path / "strat.csv"
    assert _run("report", "--strategies", "--records", str(records), "--out", str(out)) == 0
    rows = list(csv.DictReader(out.open()))
    assert rows[0]["improves"] == "ensemble"


def test_report_scenario_requires_plan(tmp_path, capsys):
    records = tmp_path / "r.csv"
    records.write_text("combination_id,test_dataset,lesion,replicate_seed,metric,value\n")
    assert _run("report", "--scenario", "T", "--records", str(records),
                "--out", str(tmp_path / "o.csv")) == 1


def test_report_mutually_exclusive_modes(tmp_path):
    assert _run("report", "--scenario", "T", "--strategies",
                "--records", "x", "--out", "y") == 1


def test_report_join_error_exits_2(tmp_path, capsys):
    mdir = _write_manifests(tmp_path, {"A": 10, "B": 10})
    plan_path = tmp_path / "plan.json"
    assert _run("plan", "--datasets", str(mdir), "--out", str(plan_path)) == 0
    records = tmp_path / "records.csv"
    with records.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["combination_id", "test_dataset", "lesion",
                         "replicate_seed", "metric", "value"])
        writer.writerow(["A", "T", "EX", 0, "dice", 0.5])  # B and A+B missing
    code = _run("report", "--scenario", "T", "--plan", str(plan_path),
                "--records", str(records), "--out", str(tmp_path / "o.csv"))
    assert code == 2
    assert "JoinError" in capsys.readouterr().err
    # flag mode renders the present row and marks the rest missing
    assert _run("report", "--scenario", "T", "--plan", str(plan_path),
                "--records", str(records), "--out", str(tmp_path / "o.csv"),
                "--allow-missing") == 0
    rows = list(csv.DictReader((tmp_path / "o.csv").open()))
    assert [r["status"] for r in rows].count("missing") == 2


# --- determinism / provenance --------------------------------------------------------------


def test_outputs_idempotent(tmp_path, synth_dataset):
    args = ("characterize", "--masks", str(synth_dataset / "masks"), "--lesion", "EX")
    out1, out2 = tmp_path / "s1.csv", tmp_path / "s2.csv"
    assert _run(*args, "--out", str(out1)) == 0
    assert _run(*args, "--out", str(out2)) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_synth_regeneration_is_byte_identical(tmp_path):
    config = _synth_config(tmp_path, dataset_id="TWIN")
    out1, out2 = tmp_path / "t1", tmp_path / "t2"
    assert _run("synth", "--config", str(config), "--out", str(out1)) == 0
    assert _run("synth", "--config", str(config), "--out", str(out2)) == 0
    for sub in ("masks", "predictions"):
        files1 = sorted((out1 / sub).iterdir())
        files2 = sorted((out2 / sub).iterdir())
        assert [f.name for f in files1] == [f.name for f in files2]
        assert all(a.read_bytes() == b.read_bytes() for a, b in zip(files1, files2))


def test_meta_flag_adds_footer(tmp_path, synth_dataset):
    out = tmp_path / "meta.csv"
    assert _run("characterize", "--masks", str(synth_dataset / "masks"),
                "--lesion", "EX", "--out", str(out), "--meta") == 0
    assert out.read_text().rstrip().splitlines()[-1].startswith("# seg-genlab")


def test_jobs_flag_keeps_output_identical(tmp_path, synth_dataset):
    out1, out4 = tmp_path / "j1.csv", tmp_path / "j4.csv"
    base = ("characterize", "--masks", str(synth_dataset / "masks"), "--lesion", "EX")
    assert _run(*base, "--out", str(out1), "--jobs", "1") == 0
    assert _run(*base, "--out", str(out4), "--jobs", "4") == 0
    assert out1.read_bytes() == out4.read_bytes()
