import itertools

import numpy as np
import pytest

from nucsynth.biomarkers import METRICS
from nucsynth.errors import InputError
from nucsynth.metrics import (
    combined_loss, dice_loss, lovasz_loss, lovasz_loss_flagged, lovasz_softmax_binary,
    overlap_metrics, sensitivity_analysis,
)
from nucsynth.render import render_cspws
from nucsynth.rng import SeededRng

PATTERNS = [np.array(bits, dtype=np.uint8).reshape(3, 3) for bits in itertools.product((0, 1), repeat=9)]


def test_identical_masks_score_one():
    m = np.zeros((8, 8), dtype=np.uint16)
    m[2:5, 2:6] = 3
    r = overlap_metrics(m, m)
    assert (r.dice, r.iou, r.precision, r.recall) == (1.0, 1.0, 1.0, 1.0)


def test_disjoint_masks_score_zero():
    a = np.zeros((8, 8), dtype=np.uint8)
    b = np.zeros((8, 8), dtype=np.uint8)
    a[:2] = 1
    b[-2:] = 1
    r = overlap_metrics(a, b)
    assert (r.dice, r.iou, r.precision, r.recall) == (0.0, 0.0, 0.0, 0.0)


def test_both_empty_is_perfect_agreement():
    z = np.zeros((4, 4))
    assert overlap_metrics(z, z).dice == 1.0


def test_overlap_matches_brute_force_counter():
    for pred in PATTERNS[::7]:
        for truth in PATTERNS:
            tp = fp = fn = 0
            for p, t in zip(pred.ravel(), truth.ravel()):
                tp += p and t
                fp += p and not t
                fn += t and not p
            r = overlap_metrics(pred, truth)
            if tp + fp + fn == 0:
                assert r.dice == 1.0
                continue
            assert r.dice == pytest.approx(2 * tp / (2 * tp + fp + fn), abs=0)
            assert r.iou == pytest.approx(tp / (tp + fp + fn), abs=0)


def test_shape_mismatch():
    with pytest.raises(InputError):
        overlap_metrics(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(InputError):
        dice_loss(np.zeros(3), np.zeros(4))


def test_dice_loss_values():
    truth = np.array([1, 0, 1, 1])
    assert dice_loss(truth.astype(float), truth) == pytest.approx(0.0)
    assert dice_loss(np.zeros(4), np.zeros(4)) == pytest.approx(0.0)
    assert dice_loss(np.array([0.5, 1.0]), np.array([1, 0])) == pytest.approx(1 - 2 / 3.25)


def test_lovasz_basic_values():
    truth = np.array([[1, 0], [1, 1]])
    assert lovasz_loss(truth.astype(float), truth) == pytest.approx(0.0)
    assert lovasz_loss(np.array([0.0]), np.array([1])) == pytest.approx(1.0)


def test_lovasz_equals_jaccard_loss_at_binary_vertices():
    for truth in PATTERNS[1:]:
        for pred in PATTERNS[::5]:
            iou = overlap_metrics(pred, truth).iou
            assert lovasz_loss(pred.astype(float), truth) == pytest.approx(1.0 - iou, abs=1e-12)


def test_lovasz_empty_truth_falls_back_to_background():
    truth = np.zeros((3, 3))
    loss, flagged = lovasz_loss_flagged(np.zeros((3, 3)), truth)
    assert flagged and loss == pytest.approx(0.0)
    loss, flagged = lovasz_loss_flagged(np.ones((3, 3)), truth)
    assert flagged and loss == pytest.approx(1.0)


def test_combined_loss_perfect_prediction():
    truth = np.array([[0, 1], [1, 1]])
    assert combined_loss(truth.astype(float), truth) == pytest.approx(0.0)
    assert combined_loss(truth.astype(float), truth, variant="softmax") == pytest.approx(0.0)
    assert lovasz_softmax_binary(truth.astype(float), truth) == pytest.approx(0.0)
    with pytest.raises(InputError):
        combined_loss(truth.astype(float), truth, variant="focal")


def test_sensitivity_table(grid_layout):
    samples = [render_cspws(grid_layout, SeededRng(s)) for s in range(2)]
    table = sensitivity_analysis(samples, offsets=(1, 2))
    assert list(table["offset"]) == [0, -1, 1, -2, 2]
    control = table[table["offset"] == 0].iloc[0]
    for m in METRICS:
        assert control[f"{m}_mean_rel_err"] == 0.0
    assert control["n_nuclei"] == 18

    area = table.set_index("offset")["area_px2_mean_rel_err"]
    assert area[2] > 0
    assert area[1] <= area[2]
    assert area[-1] <= area[-2]
    assert len([c for c in table.columns if c.endswith("_mean_rel_err")]) == len(METRICS)


def test_sensitivity_without_control(grid_layout):
    table = sensitivity_analysis([render_cspws(grid_layout, SeededRng(0))], offsets=(1,), include_control=False)
    assert list(table["offset"]) == [-1, 1]


def test_sensitivity_full_offset_range(grid_layout):
    samples = [render_cspws(grid_layout, SeededRng(s)) for s in range(2)]
    table = sensitivity_analysis(samples, offsets=(1, 2, 3, 4, 5))
    assert list(table["offset"]) == [0, -1, 1, -2, 2, -3, 3, -4, 4, -5, 5]
    perturbed = table[table["offset"] != 0]
    mean_cols = [f"{m}_mean_rel_err" for m in METRICS]
    cells = perturbed[mean_cols].to_numpy()
    assert cells.shape == (10, 8)
    assert np.isfinite(cells).all()
    assert (table.loc[table["offset"] == 0, mean_cols].to_numpy() == 0.0).all()
    assert (perturbed["n_annihilated"] == 0).all()

    area = table.set_index("offset")["area_px2_mean_rel_err"]
    for sign in (-1, 1):
        errors = [area[sign * k] for k in range(1, 6)]
        assert all(a < b for a, b in zip(errors, errors[1:]))
