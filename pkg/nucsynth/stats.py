"""Nonparametric group comparison: Mann-Whitney U, Cohen's d, ROC/Youden, KS, bootstrap CIs
and the population report built from them."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import ks_2samp, norm, rankdata

from .errors import DegenerateError, InputError, ParameterError
from .files import write_json
from .rng import SeededRng, stable_hash

log = logging.getLogger(__name__)

EXACT_LIMIT = 16
GROUPS = ("normal", "dysplasia")


def _clean(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise InputError("group is empty")
    if not np.all(np.isfinite(arr)):
        raise InputError("group contains non-finite values")
    return arr


@dataclass
class MannWhitneyResult:
    u: float  # min(u_a, u_b)
    u_a: float  # pairs with a > b, ties counted half
    u_b: float  # pairs with b > a, ties counted half
    p_two_sided: float
    mode: str
    larger: str  # "a", "b" or "equal": which group tends to be larger


def mann_whitney_u(group_a, group_b, mode: str = "auto") -> MannWhitneyResult:
    a, b = _clean(group_a), _clean(group_b)
    na, nb = a.size, b.size
    n = na + nb
    if mode == "auto":
        mode = "exact" if n <= EXACT_LIMIT else "normal_approx"
    if mode not in ("exact", "normal_approx"):
        raise ParameterError(f"unknown Mann-Whitney mode '{mode}'")
    if mode == "exact" and n > EXACT_LIMIT:
        raise ParameterError(f"exact Mann-Whitney limited to n_a + n_b <= {EXACT_LIMIT}, got {n}")

    ranks = rankdata(np.concatenate([a, b]))
    offset = na * (na + 1) / 2.0
    u_a = float(ranks[:na].sum() - offset)
    u_b = float(na * nb - u_a)

    if mode == "exact":
        picks = np.array(list(combinations(range(n), na)))
        null = ranks[picks].sum(axis=1) - offset
        tol = 1e-9
        lower = np.mean(null <= u_a + tol)
        upper = np.mean(null >= u_a - tol)
        p = min(1.0, 2.0 * min(lower, upper))
    else:
        _, counts = np.unique(ranks, return_counts=True)
        tie = float(np.sum(counts**3 - counts))
        var = na * nb / 12.0 * ((n + 1) - tie / (n * (n - 1))) if n > 1 else 0.0
        if var <= 0:
            p = 1.0
        else:
            z = max(abs(u_a - na * nb / 2.0) - 0.5, 0.0) / math.sqrt(var)
            p = min(1.0, 2.0 * float(norm.sf(z)))

    larger = "a" if u_a > u_b else "b" if u_b > u_a else "equal"
    return MannWhitneyResult(min(u_a, u_b), u_a, u_b, float(p), mode, larger)


def cohens_d_from_summary(mu1: float, sd1: float, mu2: float, sd2: float) -> float:
    """(mu2 - mu1) / sqrt((sd1^2 + sd2^2) / 2)."""
    pooled = math.sqrt((sd1**2 + sd2**2) / 2.0)
    if pooled == 0:
        raise DegenerateError("both standard deviations are zero")
    return (mu2 - mu1) / pooled


def cohens_d(group_a, group_b) -> float:
    a, b = _clean(group_a), _clean(group_b)
    sd = lambda x: float(x.std(ddof=1)) if x.size > 1 else 0.0  # noqa: E731
    return cohens_d_from_summary(float(a.mean()), sd(a), float(b.mean()), sd(b))


def effect_size_label(d: float) -> str:
    m = abs(d)
    if m >= 1.3:
        return "very large"
    if m >= 0.8:
        return "large"
    if m >= 0.5:
        return "medium"
    return "small"


@dataclass
class RocResult:
    auc: float
    youden_threshold: float
    sensitivity: float
    specificity: float
    youden_j: float
    f1: float
    direction: str  # "greater": positives score above the threshold


def roc_auc_youden(scores, labels) -> RocResult:
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise InputError(f"{s.size} scores but {y.size} labels")
    pos, neg = s[y], s[~y]
    if pos.size == 0 or neg.size == 0:
        raise InputError("ROC analysis needs both label classes")

    auc = mann_whitney_u(neg, pos, mode="normal_approx").u_b / (neg.size * pos.size)
    direction = "greater" if auc >= 0.5 else "less"

    distinct = np.unique(s)
    thresholds = (distinct[:-1] + distinct[1:]) / 2.0 if distinct.size > 1 else distinct
    # ascending thresholds, so argmax keeps the lowest among equal J
    if direction == "greater":
        sens = (pos[None, :] > thresholds[:, None]).mean(axis=1)
        spec = (neg[None, :] <= thresholds[:, None]).mean(axis=1)
    else:
        sens = (pos[None, :] < thresholds[:, None]).mean(axis=1)
        spec = (neg[None, :] >= thresholds[:, None]).mean(axis=1)
    j = sens + spec - 1.0
    best = int(np.argmax(j))

    tp = sens[best] * pos.size
    fp = (1.0 - spec[best]) * neg.size
    fn = pos.size - tp
    f1 = 2 * tp / (2 * tp + fp + fn) if tp > 0 else 0.0
    return RocResult(float(auc), float(thresholds[best]), float(sens[best]), float(spec[best]), float(j[best]), float(f1), direction)


def ks_statistic(group_a, group_b) -> float:
    """sup |F_a - F_b| over the merged sample."""
    a, b = np.sort(_clean(group_a)), np.sort(_clean(group_b))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_test(group_a, group_b) -> Tuple[float, float]:
    res = ks_2samp(_clean(group_a), _clean(group_b))
    return float(res.statistic), float(res.pvalue)


Statistic = Union[str, Callable[..., np.ndarray]]


def bootstrap_ci(
    values,
    statistic: Statistic = "mean",
    resamples: int = 10000,
    level: float = 0.95,
    rng: Optional[SeededRng] = None,
    block_size: int = 1000,
) -> Tuple[float, float]:
    """Percentile interval of a resampled statistic. Resamples are drawn in fixed-size blocks,
    each from its own derived stream, so the result depends only on the seed."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2:
        raise InputError(f"bootstrap needs >= 2 values, got {x.size}")
    fn = {"mean": np.mean, "median": np.median}.get(statistic, statistic) if isinstance(statistic, str) else statistic
    if isinstance(fn, str):
        raise ParameterError(f"unknown bootstrap statistic '{statistic}'")
    rng = rng or SeededRng(0)

    stats: List[np.ndarray] = []
    for block, start in enumerate(range(0, resamples, block_size)):
        size = min(block_size, resamples - start)
        idx = rng.child(block).generator().integers(0, x.size, size=(size, x.size))
        stats.append(np.asarray(fn(x[idx], axis=1)))
    dist = np.concatenate(stats)
    tail = (1.0 - level) / 2.0 * 100.0
    lo, hi = np.percentile(dist, [tail, 100.0 - tail])
    return float(lo), float(hi)


def bonferroni(alpha: float, k: int) -> float:
    if k < 1:
        raise InputError(f"Bonferroni needs k >= 1, got {k}")
    return alpha / k


@dataclass
class PopulationReport:
    alpha: float
    alpha_corrected: float
    resamples: int
    seed: int
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["rows"] = [{k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in r.items()} for r in self.rows]
        return out

    def write(self, out_dir) -> Tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "population_report.csv"
        json_path = out / "population_report.json"
        self.to_frame().to_csv(csv_path, index=False, float_format="%.6g", lineterminator="\n")
        write_json(json_path, self.to_dict())
        return csv_path, json_path


def population_report(
    frame: pd.DataFrame,
    metrics: Sequence[str],
    alpha: float = 0.05,
    resamples: int = 10000,
    seed: int = 0,
    class_column: str = "tissue_class",
) -> PopulationReport:
    """Per metric: group mean/SD, Mann-Whitney p with Bonferroni flag, Cohen's d, AUC and Youden
    operating point, KS statistic and bootstrap CIs of both group means."""
    if class_column not in frame.columns:
        raise InputError(f"column '{class_column}' not found. Available columns: {list(frame.columns)}")
    present = set(frame[class_column].dropna().unique())
    missing = [g for g in GROUPS if g not in present]
    if missing:
        raise InputError(f"population report needs both classes; missing {missing}")

    corrected = bonferroni(alpha, len(metrics))
    report = PopulationReport(alpha, corrected, resamples, seed)
    root = SeededRng(seed)
    for mi, metric in enumerate(metrics):
        a = frame.loc[frame[class_column] == GROUPS[0], metric].astype(float).dropna().to_numpy()
        b = frame.loc[frame[class_column] == GROUPS[1], metric].astype(float).dropna().to_numpy()
        row: Dict[str, Any] = {"metric": metric, "n_normal": int(a.size), "n_dysplasia": int(b.size)}
        if a.size < 2 or b.size < 2:
            log.warning(f"[report] {metric}: fewer than two values in a group, row left empty")
            report.rows.append(row)
            continue

        mw = mann_whitney_u(a, b)
        try:
            d = cohens_d(a, b)
        except DegenerateError:
            d = 0.0 if a.mean() == b.mean() else float("nan")
        roc = roc_auc_youden(np.concatenate([a, b]), np.r_[np.zeros(a.size), np.ones(b.size)])
        ks, ks_p = ks_test(a, b)
        ci_a = bootstrap_ci(a, resamples=resamples, rng=root.child(stable_hash(mi, 0)))
        ci_b = bootstrap_ci(b, resamples=resamples, rng=root.child(stable_hash(mi, 1)))
        row.update({
            "mean_normal": float(a.mean()),
            "sd_normal": float(a.std(ddof=1)),
            "mean_dysplasia": float(b.mean()),
            "sd_dysplasia": float(b.std(ddof=1)),
            "u": mw.u,
            "p_value": mw.p_two_sided,
            "significant": bool(mw.p_two_sided < corrected),
            "cohens_d": d,
            "effect_size": effect_size_label(d) if math.isfinite(d) else "",
            "auc": roc.auc,
            "youden_threshold": roc.youden_threshold,
            "sensitivity": roc.sensitivity,
            "specificity": roc.specificity,
            "f1": roc.f1,
            "direction": roc.direction,
            "ks_statistic": ks,
            "ks_p_value": ks_p,
            "ci_normal_lo": ci_a[0],
            "ci_normal_hi": ci_a[1],
            "ci_dysplasia_lo": ci_b[0],
            "ci_dysplasia_hi": ci_b[1],
        })
        report.rows.append(row)
    return report
