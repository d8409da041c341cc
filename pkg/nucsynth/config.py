# nucsynth/config.py
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from .errors import InputError, ParameterError

MODALITIES = ("adversarial", "cspws", "he")
SPLITS = ("train", "val", "test")


@dataclass
class RenderParams:
    # adversarial
    contrast: Tuple[float, float] = (0.3, 0.8)
    beta_alpha: float = 2.0
    beta_beta: float = 5.0
    channel_gain: float = 0.1
    perlin_octaves: int = 6
    perlin_persistence: float = 0.5
    perlin_base_scale: float = 64.0
    grf_length: Tuple[float, float] = (15.0, 45.0)
    gabor_orientations: int = 8
    gabor_scales: int = 4
    # csPWS
    packing_mean_normal: float = 0.35
    packing_sd_normal: float = 0.12
    packing_mean_dysplasia: float = 0.52
    packing_sd_dysplasia: float = 0.18
    hurst: float = 0.7
    heterogeneity: float = 0.25
    i_max: float = 0.9
    scatter_phi_scale: float = 0.3
    background_level: float = 0.05
    speckle: bool = True
    speckle_shape: float = 2.0
    speckle_scale: float = 0.15  # recorded in the sidecar; the draw is rescaled to unit mean
    read_noise: bool = True
    read_noise_sd: float = 0.02
    snr_calibration: bool = True
    snr_target_db: float = 8.2
    snr_target_sd: float = 1.4
    # H&E
    hematoxylin_rgb_mean: Tuple[float, float, float] = (0.30, 0.20, 0.65)
    hematoxylin_rgb_sd: Tuple[float, float, float] = (0.08, 0.06, 0.12)
    eosin_rgb_mean: Tuple[float, float, float] = (0.85, 0.45, 0.55)
    eosin_rgb_sd: Tuple[float, float, float] = (0.10, 0.12, 0.10)
    hematoxylin_od_range: Tuple[float, float] = (0.8, 1.5)
    eosin_od_range: Tuple[float, float] = (0.3, 0.8)
    cytoplasm_width: Tuple[float, float] = (5.0, 15.0)
    he_texture_amplitude: float = 0.1
    psf_sigma: float = 1.2
    jitter: bool = True
    hue_jitter: float = 0.05
    saturation_jitter: float = 0.2
    value_jitter: float = 0.15

    def __post_init__(self):
        lo, hi = self.contrast
        if not 0.0 <= lo <= hi <= 1.0:
            raise ParameterError(f"contrast range {self.contrast} must satisfy 0 <= lo <= hi <= 1")
        if self.speckle_shape <= 0 or self.speckle_scale <= 0:
            raise ParameterError("speckle_shape and speckle_scale must be positive")
        if not 0.0 < self.scatter_phi_scale <= 1.0:
            raise ParameterError(f"scatter_phi_scale {self.scatter_phi_scale} outside (0, 1]")


@dataclass
class LayoutConfig:
    count_mean: float = 42.0
    count_sd: float = 18.0
    count_range: Tuple[int, int] = (15, 85)
    area_mean: float = 1200.0
    area_sd: float = 450.0
    area_range: Tuple[float, float] = (500.0, 3000.0)
    # polygon areas are kept this far inside area_range so rasterised counts stay in range
    area_margin: float = 15.0
    dysplasia_area_scale: float = 1.5
    axis_ratio_mean: float = 1.4
    axis_ratio_sigma: float = 0.3
    perturb_normal: Tuple[float, float] = (2.0, 3.5)
    perturb_dysplasia: Tuple[float, float] = (3.5, 5.0)
    clearance: float = 10.0
    knot_spacing: float = 8.0
    fill_fraction: float = 0.55
    max_retries: int = 8


@dataclass
class AugmentConfig:
    enabled: bool = False
    flip: bool = True
    rotation: bool = True
    rotation_range: float = 180.0
    elastic: bool = True
    elastic_alpha: float = 50.0
    elastic_sigma: float = 5.0
    elastic_grid: int = 32
    noise: bool = True
    noise_sd: Tuple[float, float] = (0.01, 0.05)
    intensity: bool = True
    intensity_scale: Tuple[float, float] = (0.85, 1.15)
    speckle: bool = True
    speckle_shape: Tuple[float, float] = (1.5, 3.5)


@dataclass
class DatasetConfig:
    modality: str = "cspws"
    counts: Dict[str, int] = field(default_factory=lambda: {"train": 1200, "val": 200, "test": 200})
    image_size: int = 256
    pixel_size: float = 0.5
    master_seed: int = 0
    class_mix: Optional[float] = None
    out: str = "data/synthetic"
    workers: int = 1
    render: RenderParams = field(default_factory=RenderParams)
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise InputError(f"modality '{self.modality}' not one of {MODALITIES}")
        if self.image_size < 64:
            raise InputError(f"image_size {self.image_size} below minimum 64")
        if self.pixel_size <= 0:
            raise InputError(f"pixel_size {self.pixel_size} must be positive")
        unknown = set(self.counts) - set(SPLITS)
        if unknown:
            raise InputError(f"unknown splits {sorted(unknown)}; expected {SPLITS}")
        if self.class_mix is not None and not 0.0 <= self.class_mix <= 1.0:
            raise InputError(f"class_mix {self.class_mix} outside [0, 1]")

    @property
    def dysplasia_fraction(self) -> float:
        if self.class_mix is not None:
            return float(self.class_mix)
        return 0.5 if self.modality == "cspws" else 0.0

    def split_plan(self) -> List[Tuple[int, str]]:
        """(global image index, split) in train, val, test order."""
        plan: List[Tuple[int, str]] = []
        for split in SPLITS:
            for _ in range(int(self.counts.get(split, 0))):
                plan.append((len(plan), split))
        return plan

    def echo(self) -> Dict[str, Any]:
        # out and workers do not influence generated bytes
        raw = asdict(self)
        raw.pop("out")
        raw.pop("workers")
        raw["class_mix"] = self.dysplasia_fraction
        return json.loads(json.dumps(raw))

    def params_hash(self) -> str:
        blob = json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _section(cls, raw: Optional[Dict[str, Any]]):
    raw = raw or {}
    if not isinstance(raw, dict):
        raise InputError(f"[config] {cls.__name__} section must be a mapping, got {type(raw).__name__}")
    known = {f.name for f in fields(cls)}
    extra = set(raw) - known
    if extra:
        raise InputError(f"[config] unknown {cls.__name__} keys: {sorted(extra)}")
    return _build(cls, **{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})


def _build(factory, *args, **kwargs):
    # type mismatches surface as TypeError from __init__ or the __post_init__ comparisons
    try:
        return factory(*args, **kwargs)
    except TypeError as e:
        raise InputError(f"[config] bad value: {e}") from None


def load_config(path: str) -> DatasetConfig:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"Config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as e:
        raise InputError(f"[config] {p} is not valid YAML: {e}") from None
    if not isinstance(raw, dict):
        raise InputError(f"[config] {p} must hold a mapping at the top level")

    top = {k: v for k, v in raw.items() if k not in ("render", "layout", "augment")}
    unknown = set(top) - {f.name for f in fields(DatasetConfig)}
    if unknown:
        raise InputError(f"[config] unknown DatasetConfig keys: {sorted(unknown)}")
    return _build(
        DatasetConfig,
        **top,
        render=_section(RenderParams, raw.get("render")),
        layout=_section(LayoutConfig, raw.get("layout")),
        augment=_section(AugmentConfig, raw.get("augment")),
    )


def apply_overrides(cfg: DatasetConfig, pairs: List[str]) -> DatasetConfig:
    """Apply `key=value` overrides. Bare keys address RenderParams; `layout.x`, `augment.x` and
    top-level DatasetConfig fields are addressed with their prefix or name."""
    sections = {"render": cfg.render, "layout": cfg.layout, "augment": cfg.augment}
    top: Dict[str, Any] = {}
    for pair in pairs:
        if "=" not in pair:
            raise InputError(f"[config] override '{pair}' is not key=value")
        key, text = pair.split("=", 1)
        value = yaml.safe_load(text)
        if isinstance(value, list):
            value = tuple(value)
        section, _, name = key.rpartition(".")
        if not section and name in {f.name for f in fields(DatasetConfig)} and name not in sections:
            top[name] = value
            continue
        section = section or "render"
        if section not in sections:
            raise InputError(f"[config] unknown section '{section}' in override '{pair}'")
        target = sections[section]
        if name not in {f.name for f in fields(target)}:
            raise InputError(f"[config] {type(target).__name__} has no field '{name}'")
        sections[section] = _build(replace, target, **{name: value})
    return _build(replace, cfg, **top, **sections)
