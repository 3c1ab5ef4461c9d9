import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra import numpy as hnp

from seg_genlab.errors import ArityError, ConsistencyError, ShapeError, ValidationError
from seg_genlab.metrics import (
    THRESHOLDS,
    MetricRecord,
    aggregate_replicates,
    binarize,
    binned_aupr,
    dataset_metric,
    dice,
    evaluate_dataset,
)
from seg_genlab.rasters import LesionMask, ProbabilityMap

from conftest import binned_aupr_oracle, dice_oracle


def _mask(bits, lesion="EX", image_id="i"):
    return LesionMask(image_id=image_id, lesion=lesion, bits=np.asarray(bits, dtype=bool))


def _pmap(probs, lesion="EX", image_id="i"):
    return ProbabilityMap(image_id=image_id, lesion=lesion, probs=np.asarray(probs, dtype=np.float64))


# --- dice -----------------------------------------------------------------------


def test_dice_identical_masks():
    bits = np.eye(5, dtype=bool)
    assert dice(_mask(bits), _mask(bits.copy())) == 1.0


def test_dice_disjoint_masks():
    a = np.zeros((4, 4), dtype=bool)
    b = np.zeros((4, 4), dtype=bool)
    a[0], b[2] = True, True
    assert dice(_mask(a), _mask(b)) == 0.0


def test_dice_half_overlap():
    # |X| = 4, |Y| = 4, |X ∩ Y| = 2 -> 2*2 / 8 = 0.5
    x = np.zeros((3, 3), dtype=bool)
    y = np.zeros((3, 3), dtype=bool)
    x.ravel()[:4] = True
    y.ravel()[2:6] = True
    assert dice(_mask(x), _mask(y)) == 0.5


def test_dice_both_empty_is_one():
    empty = np.zeros((4, 4), dtype=bool)
    assert dice(_mask(empty), _mask(empty.copy())) == 1.0


def test_dice_matches_pixel_loop_oracle(rng):
    for _ in range(50):
        x = rng.random((32, 32)) < rng.uniform(0, 0.6)
        y = rng.random((32, 32)) < rng.uniform(0, 0.6)
        assert dice(_mask(x), _mask(y)) == dice_oracle(x, y)


def test_dice_shape_mismatch():
    with pytest.raises(ShapeError):
        dice(_mask(np.zeros((2, 2), bool)), _mask(np.zeros((3, 3), bool)))


@settings(max_examples=40, deadline=None)
@given(
    x=hnp.arrays(bool, (8, 8)),
    y=hnp.arrays(bool, (8, 8)),
)
def test_dice_symmetry_and_range(x, y):
    d1 = dice(_mask(x), _mask(y))
    d2 = dice(_mask(y), _mask(x))
    assert d1 == d2
    assert 0.0 <= d1 <= 1.0
    if x.any() or y.any():
        assert (d1 == 1.0) == np.array_equal(x, y)
        assert (d1 == 0.0) == (not (x & y).any())


# --- binarize -------------------------------------------------------------------


def test_binarize_strict_at_zero():
    p = _pmap([[0.0, 1.0], [0.0, 1.0]])
    assert binarize(p, 0.0).bits.tolist() == [[False, True], [False, True]]


def test_binarize_threshold_one_empty():
    p = _pmap([[0.3, 1.0]])
    assert not binarize(p, 1.0).bits.any()


def test_binarize_tie_is_background():
    p = _pmap([[0.5]])
    assert not binarize(p, 0.5).bits.any()


def test_binarize_range_checked():
    with pytest.raises(ValidationError):
        binarize(_pmap([[0.5]]), 1.5)


# --- binned AUPR -----------------------------------------------------------------


def test_aupr_perfect_predictor():
    truth = np.zeros((8, 8), dtype=bool)
    truth[2:5, 2:5] = True
    p = _pmap(truth.astype(np.float64))
    value, curve = binned_aupr(p, _mask(truth))
    assert value == 1.0
    assert len(curve) == 11
    assert all(pt.precision == 1.0 for pt in curve)


def test_aupr_uniform_half_quarter_prevalence():
    # Verified against the independent oracle below before freezing 0.625.
    truth = np.zeros((8, 8), dtype=bool)
    truth[:4, :4] = True  # prevalence 0.25
    p = _pmap(np.full((8, 8), 0.5))
    value, curve = binned_aupr(p, _mask(truth))
    assert binned_aupr_oracle(p.probs, truth) == value
    assert value == (1 + 0.25) / 2
    recalls = {pt.threshold: pt.recall for pt in curve}
    assert recalls[0.4] == 1.0 and recalls[0.5] == 0.0


def test_aupr_matches_independent_oracle(rng):
    for _ in range(25):
        probs = rng.random((64, 64))
        truth = rng.random((64, 64)) < rng.uniform(0.02, 0.4)
        value, _ = binned_aupr(_pmap(probs), _mask(truth))
        assert abs(value - binned_aupr_oracle(probs, truth)) <= 1e-12


def test_aupr_empty_truth_is_degenerate_zero(rng):
    probs = rng.random((16, 16))
    value, _ = binned_aupr(_pmap(probs), _mask(np.zeros((16, 16), bool)))
    assert value == 0.0


def test_aupr_invariant_under_bin_preserving_remap(rng):
    probs = rng.random((32, 32))
    truth = rng.random((32, 32)) < 0.2
    # Move every value within its threshold bin: sides of all 11 edges kept.
    bins = np.ceil(probs * 10) / 10  # bin upper edge; p in (edge-0.1, edge]
    remapped = np.where(probs == 0.0, 0.0, bins - 0.03)
    v1, _ = binned_aupr(_pmap(probs), _mask(truth))
    v2, _ = binned_aupr(_pmap(remapped), _mask(truth))
    assert v1 == v2


def test_aupr_range(rng):
    for _ in range(10):
        probs = rng.random((16, 16))
        truth = rng.random((16, 16)) < 0.3
        value, _ = binned_aupr(_pmap(probs), _mask(truth))
        assert 0.0 <= value <= 1.0


def test_thresholds_are_eleven_decimal_steps():
    assert THRESHOLDS == tuple(k / 10 for k in range(11))


# --- dataset aggregation -----------------------------------------------------------


def test_single_pair_equals_per_image_metric(rng):
    probs = rng.random((16, 16))
    truth = rng.random((16, 16)) < 0.3
    pair = [(_pmap(probs), _mask(truth))]
    micro = dataset_metric(pair, "aupr", "micro")
    macro = dataset_metric(pair, "aupr", "macro")
    direct, _ = binned_aupr(_pmap(probs), _mask(truth))
    assert micro == macro == direct


def test_macro_mean_of_one_and_zero():
    full = np.ones((4, 4), dtype=bool)
    other = np.zeros((4, 4), dtype=bool)
    other[:2] = True  # same lesion size as its truth, disjoint
    truth2 = np.zeros((4, 4), dtype=bool)
    truth2[2:] = True
    pairs = [
        (_mask(full, image_id="a"), _mask(full.copy(), image_id="a")),   # dice 1
        (_mask(other, image_id="b"), _mask(truth2, image_id="b")),        # dice 0
    ]
    assert dataset_metric(pairs, "dice", "macro") == 0.5


def test_micro_dice_matches_pooled_count_oracle(rng):
    pairs = []
    tp = fp = fn = 0
    for i in range(10):
        x = rng.random((16, 16)) < 0.3
        y = rng.random((16, 16)) < 0.3
        pairs.append((_mask(x, image_id=f"i{i}"), _mask(y, image_id=f"i{i}")))
        for a, b in zip(x.ravel().tolist(), y.ravel().tolist()):
            tp += a and b
            fp += a and not b
            fn += b and not a
    expected = 2 * tp / (2 * tp + fp + fn)
    assert dataset_metric(pairs, "dice", "micro") == expected


def test_micro_invariant_under_rechunking(rng):
    probs = rng.random((32, 32))
    truth = rng.random((32, 32)) < 0.25
    whole = [(_pmap(probs), _mask(truth))]
    tiles = [
        (_pmap(probs[:16], image_id="t"), _mask(truth[:16], image_id="t")),
        (_pmap(probs[16:], image_id="b"), _mask(truth[16:], image_id="b")),
    ]
    for metric in ("dice", "aupr"):
        assert dataset_metric(whole, metric, "micro") == dataset_metric(tiles, metric, "micro")


def test_macro_excludes_degenerate_images(rng):
    probs = rng.random((8, 8))
    truth = rng.random((8, 8)) < 0.4
    pairs = [
        (_pmap(probs, image_id="a"), _mask(truth, image_id="a")),
        (_pmap(rng.random((8, 8)), image_id="b"), _mask(np.zeros((8, 8), bool), image_id="b")),
    ]
    result = evaluate_dataset(pairs, "aupr", "macro")
    assert result.degenerate_images == 1
    assert result.n_images == 2
    assert result.value == binned_aupr(_pmap(probs), _mask(truth))[0]


def test_empty_pair_list_rejected():
    with pytest.raises(ArityError):
        dataset_metric([], "dice")


def test_mixed_lesions_rejected():
    pairs = [
        (_mask(np.ones((2, 2), bool), lesion="EX"), _mask(np.ones((2, 2), bool), lesion="EX")),
        (_mask(np.ones((2, 2), bool), lesion="HE"), _mask(np.ones((2, 2), bool), lesion="HE")),
    ]
    with pytest.raises(ConsistencyError):
        dataset_metric(pairs, "dice")


# --- replicate aggregation -----------------------------------------------------------


def _record(value, seed, combo="A+B", lesion="EX", metric="dice"):
    return MetricRecord(
        combination_id=combo, test_dataset="T", lesion=lesion,
        replicate_seed=seed, metric=metric, value=value,
    )


def test_aggregate_constant_group():
    summary = aggregate_replicates([_record(0.7, s) for s in range(8)])
    key = ("A+B", "T", "EX", "dice")
    assert summary[key].mean == 0.7
    assert summary[key].min == summary[key].max == 0.7
    assert summary[key].stddev == 0.0
    assert summary[key].n == 8


def test_aggregate_two_values():
    summary = aggregate_replicates([_record(0.2, 0), _record(0.4, 1)])
    s = summary[("A+B", "T", "EX", "dice")]
    assert abs(s.mean - 0.3) < 1e-15
    assert s.min == 0.2 and s.max == 0.4


def test_aggregate_never_mixes_lesions():
    summary = aggregate_replicates(
        [_record(0.2, 0, lesion="EX"), _record(0.8, 0, lesion="MA")]
    )
    assert len(summary) == 2
    assert summary[("A+B", "T", "EX", "dice")].mean == 0.2
    assert summary[("A+B", "T", "MA", "dice")].mean == 0.8


def test_aggregate_empty_rejected():
    with pytest.raises(ArityError):
        aggregate_replicates([])
