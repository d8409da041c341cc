"""Modality renderers: adversarial texture RGB, csPWS Sigma channel and H&E brightfield."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter
from skimage.color import hsv2rgb, rgb2hsv

from .config import RenderParams
from .errors import InputError, MeasurementError, ParameterError
from .fields import fbm_field, gabor_texture, gaussian_random_field, next_pow2, perlin_field
from .geometry import FieldLayout, rasterize_mask
from .rng import SeededRng

log = logging.getLogger(__name__)

NOISE_ORDER = "speckle_then_read_noise"


@dataclass
class FieldSample:
    image: np.ndarray  # (channels, height, width), values in [0, 1]
    mask: np.ndarray  # (height, width) uint16 instance labels
    meta: Dict[str, Any] = field(default_factory=dict)
    # intermediate fields kept for --dump-fields; never serialised with the sample
    fields: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.image.ndim == 2:
            self.image = self.image[None]
        if self.image.shape[0] not in (1, 3):
            raise InputError(f"image must have 1 or 3 channels, got {self.image.shape[0]}")
        if self.image.shape[1:] != self.mask.shape:
            raise InputError(f"image {self.image.shape[1:]} and mask {self.mask.shape} differ in size")


def _base_meta(modality: str, layout: FieldLayout, rng: SeededRng) -> Dict[str, Any]:
    classes = [n.tissue_class for n in layout.nuclei]
    return {
        "modality": modality,
        "master_seed": rng.master_seed,
        "stream_id": rng.stream_id,
        "nucleus_count": layout.count,
        "class_counts": {"normal": classes.count("normal"), "dysplasia": classes.count("dysplasia")},
        "nuclei": [n.as_record() for n in layout.nuclei],
        "measured_snr_db": None,
    }


def scatter_intensity(packing, i_max: float = 0.9):
    """Angle-integrated backscatter surrogate I(phi) = i_max * 4 phi (1 - phi)."""
    phi = np.asarray(packing, dtype=float)
    if np.any((phi <= 0.0) | (phi >= 1.0)):
        raise ParameterError("packing fraction must lie in (0, 1)")
    out = i_max * 4.0 * phi * (1.0 - phi)
    return float(out) if out.ndim == 0 else out


def unit_speckle(gen: np.random.Generator, shape_param: float, size) -> np.ndarray:
    # gamma(k, theta) has mean k*theta; scale 1/k gives the unit-mean factor with the same shape
    return gen.gamma(shape_param, 1.0 / shape_param, size=size)


def measure_snr(image: np.ndarray, mask: np.ndarray) -> float:
    """10 log10(mean(nuclear)^2 / var(background)), population variance."""
    img = np.asarray(image, dtype=float)
    if img.ndim == 3:
        if img.shape[0] != 1:
            raise InputError("measure_snr needs a single-channel image")
        img = img[0]
    nuclear = img[mask > 0]
    background = img[mask == 0]
    if nuclear.size == 0 or background.size == 0:
        raise MeasurementError("SNR needs both nuclear and background pixels")
    var = background.var()
    # near-zero variance on a constant background counts as zero
    if np.ptp(background) == 0 or var <= 1e-12 * max(background.mean() ** 2, 1.0):
        raise MeasurementError("background variance is zero")
    return float(10.0 * np.log10(nuclear.mean() ** 2 / var))


def beta_texture(gen: np.random.Generator, size, params: RenderParams) -> np.ndarray:
    return gen.beta(params.beta_alpha, params.beta_beta, size=size)


def nucleus_intensity_map(
    background: np.ndarray,
    mask: np.ndarray,
    contrast: float,
    sign: float,
    gen: np.random.Generator,
    params: RenderParams,
) -> np.ndarray:
    """Pre-clip luminance: each nucleus sits `contrast` above/below the mean background under
    its footprint, with Beta-distributed texture (centred per nucleus) at half amplitude."""
    out = background.copy()
    for idx in np.unique(mask[mask > 0]):
        region = mask == idx
        texture = beta_texture(gen, int(region.sum()), params)
        level = background[region].mean() + sign * contrast
        out[region] = level + 0.5 * (texture - texture.mean())
    return out


def _background(kind: str, w: int, h: int, rng: SeededRng, gen: np.random.Generator, params: RenderParams) -> np.ndarray:
    if kind == "perlin":
        field_ = perlin_field(w, h, params.perlin_octaves, params.perlin_persistence, params.perlin_base_scale, rng)
        return (field_ + 1.0) / 2.0
    if kind == "grf":
        length = min(gen.uniform(*params.grf_length), min(w, h) / 2.0)
        field_ = gaussian_random_field(w, h, length, rng)
        lo, hi = field_.min(), field_.max()
        return (field_ - lo) / (hi - lo) if hi > lo else np.full_like(field_, 0.5)
    return gabor_texture(w, h, params.gabor_orientations, params.gabor_scales, rng)


def render_adversarial(layout: FieldLayout, rng: SeededRng, params: Optional[RenderParams] = None) -> FieldSample:
    params = params or RenderParams()
    gen = rng.generator()
    w, h = layout.width, layout.height
    mask = rasterize_mask(layout)

    kind = ("perlin", "grf", "gabor")[int(gen.integers(3))]
    background = _background(kind, w, h, rng.child(1), gen, params)
    contrast = float(gen.uniform(*params.contrast))
    sign = 1.0 if gen.random() < 0.5 else -1.0
    lum = nucleus_intensity_map(background, mask, contrast, sign, gen, params)
    gains = gen.uniform(1.0 - params.channel_gain, 1.0 + params.channel_gain, size=3)
    image = np.clip(lum[None] * gains[:, None, None], 0.0, 1.0)

    meta = _base_meta("adversarial", layout, rng)
    meta.update({"background": kind, "contrast": contrast, "contrast_sign": int(sign), "channel_gains": gains.round(6).tolist()})
    return FieldSample(image, mask, meta, fields={"background": background})


def render_cspws(layout: FieldLayout, rng: SeededRng, params: Optional[RenderParams] = None) -> FieldSample:
    params = params or RenderParams()
    gen = rng.generator()
    w, h = layout.width, layout.height
    mask = rasterize_mask(layout)

    n = next_pow2(max(w, h))
    fbm = fbm_field(n, n, params.hurst, rng.child(1))[:h, :w]
    signal = np.zeros((h, w))
    for nucleus in layout.nuclei:
        region = mask == nucleus.id
        phi = nucleus.packing_fraction
        # texture is centred per nucleus so the mean packing stays at phi
        texture = fbm[region] - fbm[region].mean()
        packing = np.clip(phi + params.heterogeneity * phi * texture, 1e-3, 1.0 - 1e-3)
        signal[region] = scatter_intensity(params.scatter_phi_scale * packing, params.i_max)

    speckle = unit_speckle(gen, params.speckle_shape, (h, w)) if params.speckle else np.ones((h, w))
    read = gen.normal(0.0, params.read_noise_sd, (h, w)) if params.read_noise else np.zeros((h, w))
    target_db = float(np.clip(gen.normal(params.snr_target_db, params.snr_target_sd),
                              params.snr_target_db - 2 * params.snr_target_sd,
                              params.snr_target_db + 2 * params.snr_target_sd))

    inside = mask > 0
    nuclear = np.clip(signal * speckle + read, 0.0, 1.0)
    level = params.background_level
    noisy = params.speckle or params.read_noise
    if params.snr_calibration and noisy and inside.any():
        # background variance = level^2 / shape + read_sd^2 must equal mean_nuc^2 / 10^(t/10)
        m_n = nuclear[inside].mean()
        speckle_var = 1.0 / params.speckle_shape if params.speckle else 0.0
        read_var = params.read_noise_sd**2 if params.read_noise else 0.0
        wanted = m_n**2 / 10 ** (target_db / 10.0) - read_var
        if speckle_var > 0 and wanted > 0:
            level = max(params.background_level, float(np.sqrt(wanted / speckle_var)))
    image = np.where(inside, nuclear, np.clip(level * speckle + read, 0.0, 1.0))

    meta = _base_meta("cspws", layout, rng)
    try:
        meta["measured_snr_db"] = round(measure_snr(image, mask), 6)
    except MeasurementError as e:
        log.debug(f"[render] SNR not measurable: {e}")
    meta.update({
        "background_level": round(level, 6),
        "target_snr_db": round(target_db, 6),
        "noise_order": NOISE_ORDER,
        "scatter_phi_scale": params.scatter_phi_scale,
        # the speckle draw is rescaled to unit mean, so the gamma scale is recorded but not applied
        "speckle": {"shape": params.speckle_shape, "scale": params.speckle_scale, "unit_mean": True},
    })
    return FieldSample(image[None], mask, meta, fields={"packing_fbm": fbm, "sigma_signal": signal})


def _stain_color(gen: np.random.Generator, mean, sd, blue_dominant: bool) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    for _ in range(100):
        rgb = np.clip(gen.normal(mean, sd), 0.02, 0.98)
        if (rgb[2] > rgb[0]) == blue_dominant:
            return rgb
    return mean


def hsv_jitter(rgb: np.ndarray, gen: np.random.Generator, params: RenderParams) -> np.ndarray:
    """rgb is (h, w, 3). Hue shifts additively, saturation and value scale multiplicatively."""
    hsv = rgb2hsv(rgb)
    hsv[..., 0] = (hsv[..., 0] + gen.uniform(-params.hue_jitter, params.hue_jitter)) % 1.0
    hsv[..., 1] = np.clip(hsv[..., 1] * (1.0 + gen.uniform(-params.saturation_jitter, params.saturation_jitter)), 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] * (1.0 + gen.uniform(-params.value_jitter, params.value_jitter)), 0.0, 1.0)
    return hsv2rgb(hsv)


def render_he(layout: FieldLayout, rng: SeededRng, params: Optional[RenderParams] = None) -> FieldSample:
    params = params or RenderParams()
    gen = rng.generator()
    w, h = layout.width, layout.height
    mask = rasterize_mask(layout)

    hema = _stain_color(gen, params.hematoxylin_rgb_mean, params.hematoxylin_rgb_sd, blue_dominant=True)
    eosin = _stain_color(gen, params.eosin_rgb_mean, params.eosin_rgb_sd, blue_dominant=False)
    absorb_h, absorb_e = 1.0 - hema, 1.0 - eosin

    n_labels = int(mask.max())
    widths = np.zeros(n_labels + 1)
    od_h = np.zeros(n_labels + 1)
    od_e = np.zeros(n_labels + 1)
    if n_labels:
        widths[1:] = gen.uniform(*params.cytoplasm_width, size=n_labels)
        od_h[1:] = gen.uniform(*params.hematoxylin_od_range, size=n_labels)
        od_e[1:] = gen.uniform(*params.eosin_od_range, size=n_labels)

    dist, indices = distance_transform_edt(mask == 0, return_indices=True)
    nearest = mask[tuple(indices)]
    cytoplasm = (mask == 0) & (nearest > 0) & (dist <= widths[nearest])

    texture = perlin_field(w, h, 4, 0.5, 16.0, rng.child(1))
    nuc_od = od_h[mask] * (1.0 + params.he_texture_amplitude * texture)
    cyto_od = np.where(cytoplasm, od_e[nearest], 0.0)

    rgb = np.ones((h, w, 3))
    inside = mask > 0
    rgb[inside] = 10.0 ** (-nuc_od[inside][:, None] * absorb_h[None, :])
    rgb[cytoplasm] = 10.0 ** (-cyto_od[cytoplasm][:, None] * absorb_e[None, :])

    if params.jitter:
        rgb = hsv_jitter(rgb, gen, params)
    if params.psf_sigma > 0:
        rgb = np.stack([gaussian_filter(rgb[..., c], params.psf_sigma) for c in range(3)], axis=-1)
    image = np.clip(np.moveaxis(rgb, -1, 0), 0.0, 1.0)

    meta = _base_meta("he", layout, rng)
    meta.update({"hematoxylin_rgb": hema.round(6).tolist(), "eosin_rgb": eosin.round(6).tolist()})
    return FieldSample(image, mask, meta, fields={"he_texture": texture, "cytoplasm": cytoplasm.astype(float)})


RENDERERS = {"adversarial": render_adversarial, "cspws": render_cspws, "he": render_he}


def render(modality: str, layout: FieldLayout, rng: SeededRng, params: Optional[RenderParams] = None) -> FieldSample:
    try:
        fn = RENDERERS[modality]
    except KeyError:
        raise InputError(f"unknown modality '{modality}'; expected one of {sorted(RENDERERS)}") from None
    return fn(layout, rng, params)
