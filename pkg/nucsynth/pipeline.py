"""Batch commands over generated datasets: biomarker extraction, mask evaluation, population
report and mask-perturbation sensitivity."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .biomarkers import (
    METRICS, BiomarkerVector, PixelCalibration,
    biomarkers_to_frame, extract_all, write_biomarker_csv,
)
from .dataset import ImageEntry, iter_images, load_sample
from .errors import InputError, NucsynthError
from .files import read_json, read_mask_png
from .metrics import overlap_metrics, sensitivity_analysis
from .rng import SeededRng
from .stats import PopulationReport, bootstrap_ci, population_report

log = logging.getLogger(__name__)


def _extract_one(task: Tuple[ImageEntry, float]) -> Tuple[List[BiomarkerVector], Optional[str]]:
    entry, pixel_size = task
    calibration = PixelCalibration(pixel_size)
    try:
        sample = load_sample(entry)
    except (OSError, NucsynthError) as e:
        return _unreadable_rows(entry, calibration), f"{entry.image_id}: {e}"
    try:
        return extract_all(sample, calibration, image_id=entry.image_id), None
    except NucsynthError as e:
        return [], f"{entry.image_id}: {e}"


def _unreadable_rows(entry: ImageEntry, calibration: PixelCalibration) -> List[BiomarkerVector]:
    """One flagged row per mask label when the image itself cannot be decoded."""
    try:
        mask = read_mask_png(entry.mask)
    except (OSError, NucsynthError):
        return []
    meta = read_json(entry.meta) if entry.meta.exists() else {}
    classes = {int(n["id"]): n.get("tissue_class", "") for n in meta.get("nuclei", [])}
    labels, areas = np.unique(mask[mask > 0], return_counts=True)
    nan = float("nan")
    return [
        BiomarkerVector(entry.image_id, int(lab), classes.get(int(lab), ""), float(a), calibration.area_um2(float(a)),
                        nan, nan, nan, nan, nan, nan, nan, ("image_unreadable",))
        for lab, a in zip(labels, areas)
    ]


def extract_command(dataset: str, out_csv: str, pixel_size: float = 0.5, workers: int = 1) -> Tuple[pd.DataFrame, int]:
    """Returns the biomarker frame and the number of images that raised errors."""
    entries = list(iter_images(dataset))
    tasks = [(e, pixel_size) for e in entries]
    start = time.perf_counter()
    vectors: List[BiomarkerVector] = []
    errors = 0

    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_extract_one, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = map(_extract_one, tasks)
    for done, (rows, err) in enumerate(results, start=1):
        vectors.extend(rows)
        if err:
            errors += 1
            log.error(f"[ERROR] {err}")
        if done % 100 == 0:
            log.info(f"[PROGRESS] {done}/{len(tasks)} images, {len(vectors)} nuclei")

    frame = biomarkers_to_frame(vectors)
    Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
    write_biomarker_csv(frame, out_csv)
    elapsed = time.perf_counter() - start
    rate = len(vectors) / elapsed if elapsed > 0 else float("inf")
    log.info(f"[FINAL] {len(vectors)} nuclei from {len(entries)} images in {elapsed:.2f}s ({rate:.0f} nuclei/s)")
    return frame, errors


def _mask_files(root: Path, pattern: str) -> Dict[str, Path]:
    return {p.relative_to(root).as_posix(): p for p in sorted(root.rglob(pattern))}


def summarize(values: np.ndarray, seed: int = 0, resamples: int = 10000) -> Dict[str, float]:
    """Mean, SD, median and (when resamples > 0) a bootstrap 95% CI of the mean."""
    out = {"mean": float(values.mean()), "sd": float(values.std(ddof=1)) if values.size > 1 else 0.0,
           "median": float(np.median(values)), "ci_lo": float("nan"), "ci_hi": float("nan")}
    if resamples <= 0:
        return out
    if values.size >= 2:
        out["ci_lo"], out["ci_hi"] = bootstrap_ci(values, resamples=resamples, rng=SeededRng(seed))
    else:
        out["ci_lo"] = out["ci_hi"] = float(values[0]) if values.size else float("nan")
    return out


def format_summary(name: str, s: Dict[str, float]) -> str:
    return f"{name}: {s['mean']:.3f} ± {s['sd']:.3f} (Md {s['median']:.3f}, 95% CI {s['ci_lo']:.3f}-{s['ci_hi']:.3f})"


def evaluate_command(
    pred_dir: str,
    truth_dir: str,
    out_csv: str,
    seed: int = 0,
    resamples: int = 10000,
    pattern: str = "mask_*.png",
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    pred = _mask_files(Path(pred_dir), pattern)
    truth = _mask_files(Path(truth_dir), pattern)
    if set(pred) != set(truth):
        only_pred = sorted(set(pred) - set(truth))
        only_truth = sorted(set(truth) - set(pred))
        raise InputError(f"unmatched masks; only in predictions: {only_pred}, only in truth: {only_truth}")
    if not truth:
        raise InputError(f"no files matching '{pattern}' under {truth_dir}")

    rows = []
    for name in sorted(truth):
        m = overlap_metrics(read_mask_png(pred[name]), read_mask_png(truth[name]))
        rows.append({"image_id": name, "dice": m.dice, "iou": m.iou, "precision": m.precision, "recall": m.recall})
    frame = pd.DataFrame(rows)

    summary_rows = []
    for col in ("dice", "iou", "precision", "recall"):
        # only Dice gets a bootstrap CI
        s = summarize(frame[col].to_numpy(), seed, resamples if col == "dice" else 0)
        summary_rows.append({"metric": col, **s})
        if col == "dice":
            log.info(f"[evaluate] {format_summary('Dice', s)}")
    summary = pd.DataFrame(summary_rows)

    out = Path(out_csv)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False, float_format="%.6f", lineterminator="\n")
    summary.to_csv(out.with_name(out.stem + "_summary.csv"), index=False, float_format="%.6f", lineterminator="\n")
    log.info(f"[FINAL] evaluated {len(frame)} masks -> {out}")
    return frame, summary


def report_command(biomarker_csv: str, out_dir: str, alpha: float = 0.05, resamples: int = 10000, seed: int = 0) -> PopulationReport:
    frame = pd.read_csv(biomarker_csv)
    if "tissue_class" not in frame.columns:
        raise InputError(f"'{biomarker_csv}' has no tissue_class column. Available columns: {list(frame.columns)}")
    missing = [m for m in METRICS if m not in frame.columns]
    if missing:
        raise InputError(f"'{biomarker_csv}' lacks metric columns {missing}")
    report = population_report(frame, METRICS, alpha=alpha, resamples=resamples, seed=seed)
    csv_path, json_path = report.write(out_dir)
    log.info(f"[FINAL] population report -> {csv_path}, {json_path}")
    return report


def sensitivity_command(dataset: str, out_csv: str, offsets: Sequence[int] = (1, 2, 3, 4, 5),
                        pixel_size: float = 0.5, limit: Optional[int] = None) -> pd.DataFrame:
    entries = list(iter_images(dataset))
    if limit is not None:
        entries = entries[:limit]
    samples = [load_sample(e) for e in entries]
    table = sensitivity_analysis(samples, offsets, PixelCalibration(pixel_size))
    Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_csv, index=False, float_format="%.6f", lineterminator="\n")
    log.info(f"[FINAL] sensitivity table with {len(table)} rows from {len(samples)} images -> {out_csv}")
    return table


def emit_plot_data(frame: pd.DataFrame, columns: Sequence[str], out_dir: str, by: Optional[str] = None, bins: int = 32) -> List[Path]:
    """Histogram and ECDF tables per column (per group when `by` is set) for external plotting."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    groups = [(str(g), sub) for g, sub in frame.groupby(by, sort=True)] if by and by in frame.columns else [("all", frame)]
    written: List[Path] = []
    for col in columns:
        values = frame[col].astype(float).dropna()
        if values.empty:
            continue
        edges = np.histogram_bin_edges(values, bins=bins)
        hist_rows, ecdf_rows = [], []
        for name, sub in groups:
            v = np.sort(sub[col].astype(float).dropna().to_numpy())
            counts, _ = np.histogram(v, bins=edges)
            hist_rows += [{"group": name, "bin_left": lo, "bin_right": hi, "count": int(c)}
                          for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
            ecdf_rows += [{"group": name, "value": x, "ecdf": (i + 1) / v.size} for i, x in enumerate(v)]
        for kind, rows in (("hist", hist_rows), ("ecdf", ecdf_rows)):
            path = out / f"{col}_{kind}.csv"
            pd.DataFrame(rows).to_csv(path, index=False, float_format="%.6g", lineterminator="\n")
            written.append(path)
    return written

