"""Per-nucleus chromatin biomarkers: morphometry, Sigma intensity, wavelet variance slope,
PSD packing dimension and intensity entropy."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import pywt
from scipy.ndimage import distance_transform_edt, find_objects, gaussian_filter1d
from scipy.signal.windows import hann
from scipy.stats import entropy as shannon_entropy
from skimage.color import rgb2gray

from .errors import DegenerateError, InputError, InsufficientSpectrumError, NucsynthError
from .fields import next_pow2
from .render import FieldSample

log = logging.getLogger(__name__)

METRICS = (
    "area_px2",
    "perimeter_px",
    "circularity",
    "eccentricity",
    "sigma_intensity",
    "variance_slope",
    "packing_D",
    "entropy_bits",
)
CSV_COLUMNS = ("image_id", "nucleus_id", "tissue_class", "area_px2", "area_um2") + METRICS[1:] + ("flags",)


@dataclass(frozen=True)
class PixelCalibration:
    pixel_size: float = 0.5  # um per pixel

    def __post_init__(self):
        if self.pixel_size <= 0:
            raise InputError(f"pixel_size {self.pixel_size} must be positive")

    def area_um2(self, area_px2: float) -> float:
        return area_px2 * self.pixel_size**2


@dataclass
class Morphometrics:
    area: float
    perimeter: float
    circularity: float
    eccentricity: float


@dataclass
class BiomarkerVector:
    image_id: str
    nucleus_id: int
    tissue_class: str
    area_px2: float
    area_um2: float
    perimeter_px: float
    circularity: float
    eccentricity: float
    sigma_intensity: float
    variance_slope: float
    packing_D: float
    entropy_bits: float
    flags: Tuple[str, ...] = ()


# Moore neighbourhood, clockwise on screen (rows point down), starting north
_MOORE = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
_MOORE_INDEX = {d: i for i, d in enumerate(_MOORE)}


def trace_boundary(region: np.ndarray) -> np.ndarray:
    """Moore-neighbour trace of the outer 8-connected boundary, stopped on Jacob's criterion.

    Returns the (row, col) pixel centres in chain order, first pixel not repeated. Consecutive
    entries differ by one axial or diagonal step.
    """
    padded = np.pad(np.asarray(region, dtype=bool), 1)
    hits = np.argwhere(padded)
    if hits.size == 0:
        raise DegenerateError("empty region has no boundary")
    start = (int(hits[0][0]), int(hits[0][1]))  # raster-first pixel, its west neighbour is background

    def step(pixel, backtrack):
        for turn in range(1, 9):
            k = (backtrack + turn) % 8
            dr, dc = _MOORE[k]
            if padded[pixel[0] + dr, pixel[1] + dc]:
                return k
        return None

    first = step(start, 6)
    if first is None:
        return np.array([start], dtype=float) - 1.0

    chain = [start]
    pixel, backtrack = start, 6
    for _ in range(8 * hits.shape[0] + 8):
        k = step(pixel, backtrack)
        if pixel == start and k == first and len(chain) > 1:
            break
        br, bc = _MOORE[(k - 1) % 8]
        dr, dc = _MOORE[k]
        nxt = (pixel[0] + dr, pixel[1] + dc)
        backtrack = _MOORE_INDEX[(pixel[0] + br - nxt[0], pixel[1] + bc - nxt[1])]
        pixel = nxt
        chain.append(pixel)
    if chain[-1] == start:
        chain.pop()
    return np.asarray(chain, dtype=float) - 1.0


def chain_perimeter(chain: np.ndarray, sigma: float = 1.0) -> float:
    """Length of the closed pixel chain after Gaussian smoothing of `sigma` px along the boundary.

    Unsmoothed, axial steps count 1 and diagonal steps sqrt(2). The chain runs through boundary
    pixel centres, half a pixel inside the region edge; offsetting a closed curve by 1/2 adds pi.
    """
    if len(chain) < 2:
        return math.pi
    steps = np.linalg.norm(np.diff(chain, axis=0, append=chain[:1]), axis=1)
    smooth = gaussian_filter1d(chain, sigma=sigma / steps.mean(), axis=0, mode="wrap") if sigma > 0 else chain
    return float(np.linalg.norm(np.diff(smooth, axis=0, append=smooth[:1]), axis=1).sum()) + math.pi


def morphometrics(region: np.ndarray) -> Morphometrics:
    region = np.asarray(region, dtype=bool)
    area = int(region.sum())
    if area < 8:
        raise DegenerateError(f"region of {area} px is too small for shape statistics")

    perimeter = chain_perimeter(trace_boundary(region))

    coords = np.argwhere(region).astype(float)
    lam2, lam1 = np.linalg.eigvalsh(np.cov(coords.T, bias=True))
    ecc = math.sqrt(max(0.0, 1.0 - lam2 / lam1)) if lam1 > 0 else 0.0
    return Morphometrics(float(area), perimeter, 4 * math.pi * area / perimeter**2, ecc)


def otsu_threshold(values, nbins: int = 256) -> float:
    """Otsu threshold over `nbins` fixed bins on [0, 1].

    Returns the upper edge of the last lower-class bin: values below it form the lower class.
    Ties in between-class variance go to the lowest threshold.
    """
    v = np.clip(np.asarray(values, dtype=float).ravel(), 0.0, 1.0)
    if v.size < 2 or v.min() == v.max():
        raise DegenerateError("Otsu threshold needs at least two distinct values")
    counts, edges = np.histogram(v, bins=nbins, range=(0.0, 1.0))
    if np.count_nonzero(counts) < 2:
        raise DegenerateError(f"all values fall in one of {nbins} bins")
    counts = counts.astype(float)
    centers = (edges[:-1] + edges[1:]) / 2.0
    w0 = np.cumsum(counts)[:-1]
    w1 = counts.sum() - w0
    s0 = np.cumsum(counts * centers)[:-1]
    s1 = np.dot(counts, centers) - s0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = w0 * w1 * (s0 / w0 - s1 / w1) ** 2
    between[(w0 == 0) | (w1 == 0)] = -np.inf
    best = between.max()
    i = int(np.flatnonzero(between >= best - 1e-12 * abs(best))[0])
    return float(edges[i + 1])


def normalize_percentiles(image: np.ndarray) -> np.ndarray:
    """Map the 1st..99th percentile span onto [0, 1], clipping outside it."""
    lo, hi = np.percentile(image, [1, 99])
    if hi <= lo:
        return np.zeros_like(image, dtype=float)
    return np.clip((image - lo) / (hi - lo), 0.0, 1.0)


def background_level(image: np.ndarray, whole_mask: np.ndarray) -> Tuple[float, bool]:
    """Mean of extranuclear pixels below their Otsu threshold; (level, fell_back)."""
    ext = image[whole_mask == 0]
    if ext.size == 0:
        raise DegenerateError("image has no extranuclear pixels")
    try:
        t = otsu_threshold(ext)
    except DegenerateError:
        return float(ext.mean()), True
    return float(ext[ext < t].mean()), False


def sigma_intensity(
    image: np.ndarray,
    nucleus_mask: np.ndarray,
    whole_mask: np.ndarray,
    background: Optional[Tuple[float, bool]] = None,
) -> Tuple[float, bool]:
    """Background-subtracted nuclear mean over the 1st-99th percentile span, clipped to [0, 1].

    Returns (value, fell_back); fell_back marks a constant extranuclear region.
    """
    nuc = image[nucleus_mask.astype(bool)]
    if nuc.size == 0:
        raise DegenerateError("empty nucleus mask")
    level, fell_back = background if background is not None else background_level(image, whole_mask)
    lo, hi = np.percentile(image, [1, 99])
    if hi <= lo:
        return 0.0, True
    return float(np.clip((nuc.mean() - level) / (hi - lo), 0.0, 1.0)), fell_back


def embed_region(image: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Crop to the region's bounding box, fill the exterior with the nearest interior value and
    pad symmetrically to a square power-of-two side of at least 32."""
    region = np.asarray(region, dtype=bool)
    rows = np.flatnonzero(region.any(axis=1))
    cols = np.flatnonzero(region.any(axis=0))
    if rows.size == 0:
        raise DegenerateError("empty nucleus mask")
    box = (slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1))
    crop = np.asarray(image, dtype=float)[box]
    inside = region[box]
    _, indices = distance_transform_edt(~inside, return_indices=True)
    filled = crop[tuple(indices)]

    n = max(32, next_pow2(max(filled.shape)))
    ph, pw = n - filled.shape[0], n - filled.shape[1]
    return np.pad(filled, ((ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)), mode="symmetric")


def variance_slope(image: np.ndarray, region: np.ndarray, wavelet: str = "db4", levels: int = 4) -> float:
    """Slope of log Var(l) against log l for l = 2, 4, 8, 16 px from a 4-level 2-D DWT.

    Var(l) is the pooled detail variance at level j divided by l_j^2. Orthonormal detail
    coefficients at level j carry a factor 2^j over block-mean differences, so this is the
    variance of l-sized block contrasts: ~l^(2H) for fBm and ~l^-2 for white noise.
    """
    field = embed_region(image, region)
    if np.ptp(field) == 0:
        raise DegenerateError("constant region has no wavelet variance")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        coeffs = pywt.wavedec2(field, wavelet, level=levels, mode="periodization")

    scales, variances = [], []
    for j in range(1, levels + 1):
        detail = np.concatenate([band.ravel() for band in coeffs[-j]])
        scales.append(2.0**j)
        variances.append(detail.var() / scales[-1] ** 2)
    variances = np.asarray(variances)
    if np.any(variances <= 0):
        raise DegenerateError("zero detail variance at some scale")
    return float(np.polyfit(np.log(scales), np.log(variances), 1)[0])


def radial_psd(field: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Hann-windowed, radially averaged power spectrum; bins of width 1/N cycles/pixel."""
    n = field.shape[0]
    x = field - field.mean()
    window = np.outer(hann(n, sym=False), hann(n, sym=False))
    power = np.abs(np.fft.fft2(x * window)) ** 2
    f = np.fft.fftfreq(n)
    k = np.hypot(*np.meshgrid(f, f))
    bins = np.rint(k * n).astype(int)
    counts = np.bincount(bins.ravel())
    sums = np.bincount(bins.ravel(), weights=power.ravel())
    idx = np.flatnonzero(counts)
    return idx / n, sums[idx] / counts[idx]


def spectral_exponent(image: np.ndarray, region: np.ndarray, k_max: float = 0.45) -> float:
    """beta of PSD(k) ~ k^-beta, fitted over k in [4/N, k_max] cycles/pixel."""
    field = embed_region(image, region)
    n = field.shape[0]
    k, psd = radial_psd(field)
    band = (k >= 4.0 / n) & (k <= k_max) & (psd > 0)
    if band.sum() < 4:
        raise InsufficientSpectrumError(f"only {int(band.sum())} radial bins in the fit band")
    return float(-np.polyfit(np.log(k[band]), np.log(psd[band]), 1)[0])


def packing_dimension(image: np.ndarray, region: np.ndarray) -> float:
    return (6.0 - spectral_exponent(image, region)) / 2.0


def chromatin_entropy(image: np.ndarray, region: np.ndarray, bins: int = 16) -> float:
    """Shannon entropy in bits of intranuclear values histogrammed on [0, 1]."""
    values = np.clip(np.asarray(image, dtype=float)[np.asarray(region, dtype=bool)], 0.0, 1.0)
    if values.size == 0:
        raise DegenerateError("empty nucleus mask")
    counts, _ = np.histogram(values, bins=bins, range=(0.0, 1.0))
    return float(shannon_entropy(counts, base=2))


def luminance(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        return img
    if img.shape[0] == 1:
        return img[0]
    return rgb2gray(np.moveaxis(img, 0, -1))


def extract_all(
    sample: FieldSample,
    calibration: Optional[PixelCalibration] = None,
    image_id: str = "",
) -> List[BiomarkerVector]:
    calibration = calibration or PixelCalibration()
    if sample.image.shape[-2:] != sample.mask.shape:
        raise InputError(f"image {sample.image.shape} and mask {sample.mask.shape} differ in size")
    gray = luminance(sample.image)
    norm = normalize_percentiles(gray)
    mask = sample.mask
    classes = {int(n["id"]): n.get("tissue_class", "") for n in sample.meta.get("nuclei", [])}

    try:
        bg = background_level(gray, mask)
    except DegenerateError:
        bg = None

    out: List[BiomarkerVector] = []
    for idx, sl in enumerate(find_objects(mask), start=1):
        if sl is None:
            continue
        region = mask[sl] == idx
        flags: List[str] = []
        values = {m: float("nan") for m in METRICS}

        def attempt(name: str, fn):
            try:
                return fn()
            except NucsynthError as e:
                flags.append(name)
                log.debug(f"[extract] {image_id} nucleus {idx}: {name} failed: {e}")
                return None

        shape = attempt("morphometrics", lambda: morphometrics(region))
        if shape is not None:
            values.update(area_px2=shape.area, perimeter_px=shape.perimeter,
                          circularity=shape.circularity, eccentricity=shape.eccentricity)
        else:
            values["area_px2"] = float(region.sum())
        if bg is None:
            flags.append("sigma_intensity")
        else:
            sigma = attempt("sigma_intensity", lambda: sigma_intensity(gray, mask == idx, mask, background=bg))
            if sigma is not None:
                values["sigma_intensity"] = sigma[0]
                if sigma[1]:
                    flags.append("sigma_background_fallback")
        for name, fn in (("variance_slope", variance_slope), ("packing_D", packing_dimension)):
            result = attempt(name, lambda fn=fn: fn(gray[sl], region))
            if result is not None:
                values[name] = result
        values["entropy_bits"] = chromatin_entropy(norm[sl], region)

        out.append(BiomarkerVector(
            image_id=image_id,
            nucleus_id=idx,
            tissue_class=classes.get(idx, ""),
            area_um2=calibration.area_um2(values["area_px2"]),
            flags=tuple(flags),
            **values,
        ))
    return out


def biomarkers_to_frame(vectors: Sequence[BiomarkerVector]) -> pd.DataFrame:
    rows = []
    for v in vectors:
        row = asdict(v)
        row["flags"] = ";".join(v.flags)
        rows.append(row)
    return pd.DataFrame(rows, columns=list(CSV_COLUMNS))


def write_biomarker_csv(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
