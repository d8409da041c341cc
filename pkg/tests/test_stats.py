import json

import numpy as np
import pandas as pd
import pytest

from nucsynth.errors import DegenerateError, InputError, ParameterError
from nucsynth.rng import SeededRng
from nucsynth.stats import (
    bonferroni, bootstrap_ci, cohens_d, cohens_d_from_summary, effect_size_label, ks_statistic,
    ks_test, mann_whitney_u, population_report, roc_auc_youden,
)


def test_mann_whitney_exact_separated():
    r = mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert r.mode == "exact"
    assert r.u == 0
    assert r.u_a + r.u_b == 9
    assert r.p_two_sided == pytest.approx(0.1)
    assert r.larger == "b"


def test_mann_whitney_identical_groups():
    r = mann_whitney_u([1, 2, 3], [1, 2, 3], mode="exact")
    assert r.p_two_sided == pytest.approx(1.0)
    assert r.larger == "equal"


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_mann_whitney_exact_close_to_normal_approx(seed):
    gen = np.random.default_rng(seed)
    a, b = gen.normal(0, 1, 8), gen.normal(0.5, 1, 8)
    exact = mann_whitney_u(a, b, mode="exact").p_two_sided
    approx = mann_whitney_u(a, b, mode="normal_approx").p_two_sided
    assert abs(exact - approx) <= 0.02


def test_mann_whitney_guards():
    with pytest.raises(InputError):
        mann_whitney_u([], [1, 2])
    with pytest.raises(ParameterError):
        mann_whitney_u(range(10), range(10), mode="exact")
    assert mann_whitney_u(range(10), range(10)).mode == "normal_approx"


def test_cohens_d():
    assert cohens_d_from_summary(1.0, 2.0, 1.0, 2.0) == 0.0
    assert cohens_d_from_summary(0.0, 1.5, 1.5, 1.5) == pytest.approx(1.0)
    assert cohens_d_from_summary(1201, 156, 1802, 224) == pytest.approx(3.11, abs=0.01)
    with pytest.raises(DegenerateError):
        cohens_d_from_summary(0.0, 0.0, 1.0, 0.0)
    assert cohens_d([1, 2, 3], [2, 3, 4]) == pytest.approx(1.0)


@pytest.mark.parametrize("d,label", [(0.1, "small"), (-0.6, "medium"), (0.9, "large"), (2.5, "very large")])
def test_effect_size_label(d, label):
    assert effect_size_label(d) == label


def test_roc_perfect_separation():
    r = roc_auc_youden([0, 1, 2, 3, 4, 5], [0, 0, 0, 1, 1, 1])
    assert r.auc == 1.0
    assert r.sensitivity == 1.0 and r.specificity == 1.0
    assert r.youden_threshold == pytest.approx(2.5)
    assert r.f1 == 1.0


def test_roc_identical_scores():
    assert roc_auc_youden([1.0] * 6, [0, 1, 0, 1, 0, 1]).auc == 0.5


@pytest.mark.parametrize("seed", range(5))
def test_roc_auc_matches_pairwise_count(seed):
    gen = np.random.default_rng(seed)
    scores = np.round(gen.normal(0, 1, 20), 1)
    labels = np.r_[np.zeros(10), np.ones(10)].astype(bool)
    gen.shuffle(labels)
    pos, neg = scores[labels], scores[~labels]
    brute = (np.sum(pos[:, None] > neg[None, :]) + 0.5 * np.sum(pos[:, None] == neg[None, :])) / (pos.size * neg.size)
    assert roc_auc_youden(scores, labels).auc == pytest.approx(brute, abs=1e-12)


def test_roc_needs_both_classes():
    with pytest.raises(InputError):
        roc_auc_youden([1, 2, 3], [1, 1, 1])


def test_ks_statistic():
    assert ks_statistic([1, 2, 3], [1, 2, 3]) == 0.0
    assert ks_statistic([1, 2], [5, 6]) == 1.0
    assert ks_statistic([1, 2], [1.5, 2.5]) == pytest.approx(0.5)
    stat, p = ks_test([1, 2], [1.5, 2.5])
    assert stat == pytest.approx(0.5) and 0.0 <= p <= 1.0


def test_bootstrap_ci_basics():
    assert bootstrap_ci(np.full(10, 3.0), resamples=500) == (3.0, 3.0)
    x = np.random.default_rng(0).normal(size=50)
    assert bootstrap_ci(x, rng=SeededRng(4), resamples=2000) == bootstrap_ci(x, rng=SeededRng(4), resamples=2000)
    lo, hi = bootstrap_ci(x, statistic="median", rng=SeededRng(4), resamples=2000)
    assert lo <= np.median(x) <= hi
    with pytest.raises(InputError):
        bootstrap_ci([1.0])
    with pytest.raises(ParameterError):
        bootstrap_ci(x, statistic="mode")


@pytest.mark.slow
def test_bootstrap_ci_coverage():
    hits = 0
    for trial in range(200):
        x = np.random.default_rng(trial).standard_normal(200)
        lo, hi = bootstrap_ci(x, resamples=2000, rng=SeededRng(trial))
        hits += lo <= 0.0 <= hi
    assert hits >= 180


@pytest.mark.parametrize("alpha,k,expected", [(0.05, 8, 0.00625), (0.05, 1, 0.05), (0.05, 3, 0.05 / 3)])
def test_bonferroni(alpha, k, expected):
    assert bonferroni(alpha, k) == pytest.approx(expected)


def test_bonferroni_rejects_zero_tests():
    with pytest.raises(InputError):
        bonferroni(0.05, 0)


def _frame(shift=0.0, n=40):
    gen = np.random.default_rng(0)
    base = gen.normal(1.0, 0.2, n)
    other = gen.normal(5.0, 1.0, n)
    return pd.DataFrame({
        "tissue_class": ["normal"] * n + ["dysplasia"] * n,
        "area_px2": np.r_[base, base + shift],
        "circularity": np.r_[other, other + shift],
    })


def test_population_report_identical_groups():
    report = population_report(_frame(), ["area_px2", "circularity"], resamples=200, seed=1)
    assert report.alpha_corrected == pytest.approx(0.025)
    for row in report.rows:
        assert row["cohens_d"] == 0.0
        assert row["auc"] == 0.5
        assert not row["significant"]


def test_population_report_detects_shift():
    row = population_report(_frame(shift=1.0), ["area_px2"], resamples=200).rows[0]
    assert row["significant"]
    assert row["cohens_d"] > 0.8
    assert row["auc"] > 0.9
    assert row["direction"] == "greater"
    assert row["ci_dysplasia_lo"] > row["ci_normal_hi"]


def test_population_report_is_reproducible(tmp_path):
    paths = []
    for name in ("a", "b"):
        csv_path, json_path = population_report(_frame(shift=0.1), ["area_px2"], resamples=300, seed=5).write(tmp_path / name)
        paths.append((csv_path.read_bytes(), json_path.read_bytes()))
    assert paths[0] == paths[1]
    payload = json.loads(paths[0][1])
    assert payload["rows"][0]["metric"] == "area_px2"


def test_population_report_needs_both_classes():
    frame = _frame()
    with pytest.raises(InputError):
        population_report(frame[frame["tissue_class"] == "normal"], ["area_px2"])
    with pytest.raises(InputError):
        population_report(frame.drop(columns="tissue_class"), ["area_px2"])
