import shutil
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from nucsynth.biomarkers import CSV_COLUMNS, METRICS
from nucsynth.dataset import generate_dataset
from nucsynth.errors import InputError
from nucsynth.pipeline import (
    emit_plot_data, evaluate_command, extract_command, report_command, sensitivity_command, summarize,
)


@pytest.fixture
def dataset(small_config):
    root, manifest = generate_dataset(small_config)
    return root, manifest


def _nuclei(manifest):
    return sum(f["nucleus_count"] for f in manifest["files"] if f["kind"] == "image")


def test_extract_one_row_per_nucleus(dataset, tmp_path):
    root, manifest = dataset
    frame, errors = extract_command(str(root), str(tmp_path / "bio.csv"))
    assert errors == 0
    assert len(frame) == _nuclei(manifest)
    assert list(frame.columns) == list(CSV_COLUMNS)
    assert set(frame["tissue_class"]) <= {"normal", "dysplasia"}
    assert np.allclose(frame["area_um2"], frame["area_px2"] * 0.25)


def test_extract_is_byte_identical(dataset, tmp_path):
    root, _ = dataset
    extract_command(str(root), str(tmp_path / "a.csv"))
    extract_command(str(root), str(tmp_path / "b.csv"))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_extract_flags_unreadable_images(dataset, tmp_path):
    root, manifest = dataset
    (root / "val" / "img_00002.png").write_bytes(b"not a png")
    frame, errors = extract_command(str(root), str(tmp_path / "bio.csv"))
    assert errors == 1
    assert len(frame) == _nuclei(manifest)
    flagged = frame[frame["flags"] == "image_unreadable"]
    assert len(flagged) > 0
    assert set(flagged["image_id"]) == {"val/img_00002"}
    assert flagged["sigma_intensity"].isna().all()


def test_evaluate_truth_against_itself(dataset, tmp_path):
    root, _ = dataset
    frame, summary = evaluate_command(str(root), str(root), str(tmp_path / "eval.csv"), resamples=200)
    assert len(frame) == 4
    assert (frame["dice"] == 1.0).all() and (frame["iou"] == 1.0).all()
    dice = summary.set_index("metric").loc["dice"]
    assert dice["mean"] == 1.0 and dice["ci_lo"] == 1.0 and dice["ci_hi"] == 1.0
    assert (tmp_path / "eval_summary.csv").exists()


def test_evaluate_unmatched_files(dataset, tmp_path):
    root, _ = dataset
    pred = tmp_path / "pred"
    shutil.copytree(root, pred)
    (pred / "test" / "mask_00003.png").unlink()
    with pytest.raises(InputError, match="mask_00003"):
        evaluate_command(str(pred), str(root), str(tmp_path / "eval.csv"))


def test_summary_ci_is_seeded():
    values = np.random.default_rng(0).random(30)
    assert summarize(values, seed=3, resamples=500) == summarize(values, seed=3, resamples=500)
    assert np.isnan(summarize(values, resamples=0)["ci_lo"])


def _biomarker_csv(path, n=30):
    gen = np.random.default_rng(1)
    cols = {m: np.tile(gen.random(n), 2) for m in METRICS}
    frame = pd.DataFrame({"image_id": "x", "nucleus_id": np.arange(2 * n), "tissue_class": ["normal"] * n + ["dysplasia"] * n, **cols})
    frame.to_csv(path, index=False)
    return frame


def test_report_identical_groups(tmp_path):
    _biomarker_csv(tmp_path / "bio.csv")
    report = report_command(str(tmp_path / "bio.csv"), str(tmp_path / "report"), resamples=200)
    assert [row["auc"] for row in report.rows] == [0.5] * len(METRICS)
    assert report.alpha_corrected == pytest.approx(0.05 / 8)
    assert (tmp_path / "report" / "population_report.csv").exists()
    assert (tmp_path / "report" / "population_report.json").exists()


def test_report_requires_class_column(tmp_path):
    frame = _biomarker_csv(tmp_path / "bio.csv")
    frame.drop(columns="tissue_class").to_csv(tmp_path / "bad.csv", index=False)
    with pytest.raises(InputError):
        report_command(str(tmp_path / "bad.csv"), str(tmp_path / "report"))


def test_sensitivity_offsets(dataset, tmp_path):
    root, _ = dataset
    table = sensitivity_command(str(root), str(tmp_path / "sens.csv"), offsets=[1, 2], limit=2)
    assert sorted(table.loc[table["offset"] != 0, "offset"]) == [-2, -1, 1, 2]
    assert (tmp_path / "sens.csv").exists()


def test_emit_plot_data(tmp_path):
    frame = _biomarker_csv(tmp_path / "bio.csv")
    written = emit_plot_data(frame, ["area_px2", "circularity"], str(tmp_path / "plots"), by="tissue_class", bins=8)
    assert sorted(p.name for p in written) == [
        "area_px2_ecdf.csv", "area_px2_hist.csv", "circularity_ecdf.csv", "circularity_hist.csv",
    ]
    hist = pd.read_csv(tmp_path / "plots" / "area_px2_hist.csv")
    assert set(hist["group"]) == {"normal", "dysplasia"}
    assert hist.groupby("group")["count"].sum().tolist() == [30, 30]


@pytest.mark.slow
def test_outputs_do_not_depend_on_worker_count(small_config, tmp_path):
    outputs = {}
    for workers in (1, 4):
        cfg = replace(small_config, out=str(tmp_path / f"data_{workers}"), workers=workers)
        root, manifest = generate_dataset(cfg)
        csv = tmp_path / f"bio_{workers}.csv"
        extract_command(str(root), str(csv), workers=workers)
        report_command(str(csv), str(tmp_path / f"report_{workers}"), resamples=200)
        outputs[workers] = (
            [f["sha256"] for f in manifest["files"]],
            csv.read_bytes(),
            (tmp_path / f"report_{workers}" / "population_report.csv").read_bytes(),
            (tmp_path / f"report_{workers}" / "population_report.json").read_bytes(),
        )
    assert outputs[1] == outputs[4]
