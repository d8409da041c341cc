"""Training-time augmentation. Geometric ops move image and mask together with the same constant
padding: images are interpolated bilinearly and padded with the background level, masks use nearest
neighbour and pad with label 0."""
from __future__ import annotations

from dataclasses import replace
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates
from skimage.measure import block_reduce
from skimage.transform import resize
from skimage.transform import rotate as sk_rotate

from .config import AugmentConfig
from .render import FieldSample, unit_speckle
from .rng import SeededRng


def _with(sample: FieldSample, image: np.ndarray, mask: Optional[np.ndarray] = None, op: str = "") -> FieldSample:
    meta = dict(sample.meta)
    meta["augment"] = list(meta.get("augment", [])) + [op]
    return replace(sample, image=image, mask=sample.mask if mask is None else mask, meta=meta, fields={})


def flip(sample: FieldSample, axis: str = "horizontal") -> FieldSample:
    ax = 1 if axis == "horizontal" else 0
    return _with(sample, np.flip(sample.image, axis=ax + 1).copy(), np.flip(sample.mask, axis=ax).copy(), f"flip_{axis}")


def _fill_levels(sample: FieldSample) -> np.ndarray:
    """Per-channel median of the unlabelled pixels, used as the warp padding."""
    background = sample.mask == 0
    if not background.any():
        return np.median(sample.image.reshape(sample.image.shape[0], -1), axis=1)
    return np.median(sample.image[:, background], axis=1)


def rotate(sample: FieldSample, angle: float) -> FieldSample:
    """Counter-clockwise rotation in degrees about the image centre. Multiples of 90 are lattice-exact."""
    quarter = angle / 90.0
    if quarter == round(quarter):
        k = int(round(quarter)) % 4
        image = np.rot90(sample.image, k, axes=(1, 2)).copy()
        mask = np.rot90(sample.mask, k).copy()
        return _with(sample, image, mask, f"rotate_{angle:g}")

    fill = _fill_levels(sample)
    image = np.stack([
        sk_rotate(channel, angle, order=1, mode="constant", cval=float(level), preserve_range=True)
        for channel, level in zip(sample.image, fill)
    ])
    mask = sk_rotate(sample.mask.astype(float), angle, order=0, mode="constant", cval=0, preserve_range=True)
    return _with(sample, np.clip(image, 0.0, 1.0), np.rint(mask).astype(sample.mask.dtype), f"rotate_{angle:g}")


def _displacement(gen: np.random.Generator, shape, alpha: float, sigma: float, grid: int) -> np.ndarray:
    field = gaussian_filter(gen.uniform(-1.0, 1.0, shape), sigma, mode="constant") * alpha
    if grid <= 1:
        return field
    # one control point per grid cell carrying the cell's mean displacement, interpolated bicubically
    lattice = block_reduce(field, (grid, grid), func=np.nanmean, cval=np.nan)
    return resize(lattice, shape, order=3, mode="edge")


def elastic_deform(
    sample: FieldSample,
    gen: np.random.Generator,
    alpha: float = 50.0,
    sigma: float = 5.0,
    grid: int = 32,
) -> FieldSample:
    """Random displacement smoothed by a Gaussian of width `sigma` and scaled by `alpha`, reduced to
    control points `grid` px apart (grid <= 1 keeps the dense field)."""
    h, w = sample.mask.shape
    dx = _displacement(gen, (h, w), alpha, sigma, grid)
    dy = _displacement(gen, (h, w), alpha, sigma, grid)
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    coords = np.array([rows + dy, cols + dx])

    fill = _fill_levels(sample)
    image = np.stack([
        map_coordinates(ch, coords, order=1, mode="constant", cval=float(level)) for ch, level in zip(sample.image, fill)
    ])
    mask = map_coordinates(sample.mask, coords, order=0, mode="constant", cval=0)
    return _with(sample, np.clip(image, 0.0, 1.0), mask.astype(sample.mask.dtype), "elastic")


def add_noise(sample: FieldSample, gen: np.random.Generator, sd: float) -> FieldSample:
    return _with(sample, np.clip(sample.image + gen.normal(0.0, sd, sample.image.shape), 0.0, 1.0), op="noise")


def scale_intensity(sample: FieldSample, factor: float) -> FieldSample:
    return _with(sample, np.clip(sample.image * factor, 0.0, 1.0), op="intensity")


def speckle(sample: FieldSample, gen: np.random.Generator, shape_param: float) -> FieldSample:
    return _with(sample, np.clip(sample.image * unit_speckle(gen, shape_param, sample.image.shape), 0.0, 1.0), op="speckle")


def augment(sample: FieldSample, rng: SeededRng, config: Optional[AugmentConfig] = None) -> FieldSample:
    cfg = config or AugmentConfig()
    gen = rng.generator()
    out = sample
    if cfg.flip:
        for axis in ("horizontal", "vertical"):
            if gen.random() < 0.5:
                out = flip(out, axis)
    if cfg.rotation:
        out = rotate(out, float(gen.uniform(-cfg.rotation_range, cfg.rotation_range)))
    if cfg.elastic:
        out = elastic_deform(out, gen, cfg.elastic_alpha, cfg.elastic_sigma, cfg.elastic_grid)
    if cfg.noise:
        out = add_noise(out, gen, float(gen.uniform(*cfg.noise_sd)))
    if cfg.intensity:
        out = scale_intensity(out, float(gen.uniform(*cfg.intensity_scale)))
    if cfg.speckle:
        out = speckle(out, gen, float(gen.uniform(*cfg.speckle_shape)))
    return out
