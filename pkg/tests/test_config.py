import pytest

from nucsynth.config import (
    AugmentConfig, DatasetConfig, LayoutConfig, RenderParams, apply_overrides, load_config,
)
from nucsynth.errors import InputError, ParameterError


def test_defaults_match_reference_population():
    cfg = DatasetConfig()
    assert cfg.counts == {"train": 1200, "val": 200, "test": 200}
    assert len(cfg.split_plan()) == 1600
    assert cfg.dysplasia_fraction == 0.5
    assert DatasetConfig(modality="he").dysplasia_fraction == 0.0
    assert DatasetConfig(modality="he", class_mix=0.25).dysplasia_fraction == 0.25


def test_split_plan_orders_train_val_test():
    cfg = DatasetConfig(counts={"train": 2, "val": 1, "test": 1})
    assert cfg.split_plan() == [(0, "train"), (1, "train"), (2, "val"), (3, "test")]


def test_invalid_fields_raise():
    with pytest.raises(InputError):
        DatasetConfig(modality="mri")
    with pytest.raises(InputError):
        DatasetConfig(image_size=32)
    with pytest.raises(InputError):
        DatasetConfig(counts={"holdout": 3})
    with pytest.raises(ParameterError):
        RenderParams(contrast=(0.9, 0.2))


def test_params_hash_ignores_out_and_workers():
    a = DatasetConfig(out="a", workers=1)
    b = DatasetConfig(out="b", workers=8)
    assert a.params_hash() == b.params_hash()
    assert a.params_hash() != DatasetConfig(master_seed=1).params_hash()


def test_load_config_reads_sections(tmp_path):
    p = tmp_path / "dataset.yaml"
    p.write_text(
        "modality: he\n"
        "master_seed: 3\n"
        "counts: {train: 4, val: 0, test: 1}\n"
        "render:\n  contrast: [0.4, 0.6]\n"
        "layout:\n  clearance: 12\n"
        "augment:\n  enabled: true\n"
    )
    cfg = load_config(str(p))
    assert cfg.modality == "he"
    assert cfg.render.contrast == (0.4, 0.6)
    assert cfg.layout.clearance == 12
    assert cfg.augment.enabled is True


def test_load_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("layout:\n  spacing: 3\n")
    with pytest.raises(InputError, match="spacing"):
        load_config(str(p))


def test_load_config_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(str(tmp_path / "nope.yaml"))


def test_apply_overrides_routes_keys():
    cfg = apply_overrides(DatasetConfig(), [
        "hurst=0.5",
        "layout.clearance=12",
        "augment.enabled=true",
        "image_size=128",
        "contrast=[0.2, 0.4]",
    ])
    assert cfg.render.hurst == 0.5
    assert cfg.render.contrast == (0.2, 0.4)
    assert cfg.layout.clearance == 12
    assert cfg.augment.enabled is True
    assert cfg.image_size == 128
    assert isinstance(cfg.layout, LayoutConfig)
    assert isinstance(cfg.augment, AugmentConfig)


@pytest.mark.parametrize("pair", ["hurst", "nosection.x=1", "layout.nofield=1"])
def test_apply_overrides_rejects_bad_pairs(pair):
    with pytest.raises(InputError):
        apply_overrides(DatasetConfig(), [pair])


@pytest.mark.parametrize("text, match", [
    ("modality: he\nimage_sise: 128\n", "image_sise"),
    ("image_size: big\n", "bad value"),
    ("render: [1, 2]\n", "mapping"),
    ("- just\n- a list\n", "mapping"),
    ("counts: {train: 4\n", "YAML"),
])
def test_load_config_input_errors(tmp_path, text, match):
    p = tmp_path / "bad.yaml"
    p.write_text(text)
    with pytest.raises(InputError, match=match):
        load_config(str(p))


def test_apply_overrides_rejects_bad_types():
    with pytest.raises(InputError):
        apply_overrides(DatasetConfig(), ["image_size=big"])
    with pytest.raises(InputError):
        apply_overrides(DatasetConfig(), ["contrast=5"])
