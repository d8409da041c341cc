"""Procedural scalar fields: Perlin octaves, Gaussian random fields, Gabor textures and
power-law (fractal Brownian motion) spectra.

Fields are float64 arrays of shape (height, width). Every generator takes a SeededRng
and is a pure function of its arguments.
"""
from __future__ import annotations

import math
from typing import List

import numpy as np
from scipy import ndimage
from skimage.filters import gabor_kernel

from .errors import DimensionError, ParameterError
from .rng import SeededRng


def _check_size(width: int, height: int) -> None:
    if width <= 0 or height <= 0:
        raise DimensionError(f"field size {width}x{height} must be positive")


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6 - 15) + 10)


def _standardize(values: np.ndarray) -> np.ndarray:
    values = values - values.mean()
    sd = values.std()
    return values / sd if sd > 0 else values


def perlin_octave(width: int, height: int, cell_size: float, rng: SeededRng) -> np.ndarray:
    """One gradient-noise layer with lattice spacing `cell_size` pixels."""
    _check_size(width, height)
    gen = rng.generator()
    nx = int(math.ceil(width / cell_size)) + 2
    ny = int(math.ceil(height / cell_size)) + 2
    angles = gen.uniform(0.0, 2 * np.pi, size=(ny, nx))
    gx, gy = np.cos(angles), np.sin(angles)

    x = np.arange(width) / cell_size
    y = np.arange(height) / cell_size
    X, Y = np.meshgrid(x, y)
    x0 = np.floor(X).astype(int)
    y0 = np.floor(Y).astype(int)
    fx = X - x0
    fy = Y - y0

    def corner(dx: int, dy: int) -> np.ndarray:
        i, j = y0 + dy, x0 + dx
        return gx[i, j] * (fx - dx) + gy[i, j] * (fy - dy)

    u, v = _fade(fx), _fade(fy)
    top = corner(0, 0) + u * (corner(1, 0) - corner(0, 0))
    bottom = corner(0, 1) + u * (corner(1, 1) - corner(0, 1))
    return top + v * (bottom - top)


def perlin_field(
    width: int,
    height: int,
    octaves: int = 6,
    persistence: float = 0.5,
    base_scale: float = 64.0,
    rng: SeededRng = SeededRng(0),
    rescale: bool = True,
) -> np.ndarray:
    _check_size(width, height)
    if octaves < 1:
        raise ParameterError(f"octaves must be >= 1, got {octaves}")
    if not 0.0 < persistence <= 1.0:
        raise ParameterError(f"persistence {persistence} outside (0, 1]")
    if base_scale < 2:
        raise ParameterError(f"base_scale {base_scale} must be >= 2")

    total = np.zeros((height, width))
    for k in range(octaves):
        total += persistence**k * perlin_octave(width, height, base_scale / 2**k, rng.child(k))
    if not rescale:
        return total

    # centre on the mean, then divide by the peak magnitude
    total -= total.mean()
    peak = np.abs(total).max()
    return total / peak if peak > 0 else total


def perlin_loop(n_points: int, n_cells: int, gen: np.random.Generator, octaves: int = 2) -> np.ndarray:
    """Periodic 1-D gradient noise sampled at `n_points`, peak-normalised to [-1, 1]."""
    out = np.zeros(n_points)
    for k in range(octaves):
        cells = n_cells * 2**k
        grads = gen.uniform(-1.0, 1.0, size=cells)
        t = np.arange(n_points) / n_points * cells
        i = np.floor(t).astype(int)
        f = t - i
        a = grads[i % cells] * f
        b = grads[(i + 1) % cells] * (f - 1)
        out += 0.5**k * (a + _fade(f) * (b - a))
    peak = np.abs(out).max()
    return out / peak if peak > 0 else out


def gaussian_random_field(width: int, height: int, correlation_length: float, rng: SeededRng) -> np.ndarray:
    _check_size(width, height)
    if correlation_length <= 0:
        raise ParameterError(f"correlation_length {correlation_length} must be positive")
    if correlation_length > min(width, height) / 2:
        raise ParameterError(
            f"correlation_length {correlation_length} exceeds half the field size {min(width, height) / 2}"
        )
    noise = rng.generator().standard_normal((height, width))
    # periodic Gaussian filter applied in the Fourier domain
    filtered = np.fft.ifft2(ndimage.fourier_gaussian(np.fft.fft2(noise), sigma=correlation_length)).real
    return _standardize(filtered)


def gabor_bank(n_orientations: int = 8, n_scales: int = 4) -> List[np.ndarray]:
    """Real, zero-mean Gabor kernels: wavelengths 4, 8, 16, ... px, envelope sigma 0.56 x wavelength."""
    if n_orientations < 1 or n_scales < 1:
        raise ParameterError(f"gabor bank needs >= 1 orientation and scale, got {n_orientations}x{n_scales}")
    bank = []
    for s in range(n_scales):
        wavelength = 4.0 * 2**s
        sigma = 0.56 * wavelength
        for o in range(n_orientations):
            theta = np.pi * o / n_orientations
            kernel = np.real(gabor_kernel(1.0 / wavelength, theta=theta, sigma_x=sigma, sigma_y=sigma))
            bank.append(kernel - kernel.mean())
    return bank


def apply_kernel(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Circular convolution via FFT; kernels larger than the field wrap around."""
    h, w = values.shape
    kh, kw = kernel.shape
    rows = (np.arange(kh) - kh // 2) % h
    cols = (np.arange(kw) - kw // 2) % w
    wrapped = np.zeros((h, w))
    np.add.at(wrapped, (rows[:, None], cols[None, :]), kernel)
    return np.fft.ifft2(np.fft.fft2(values) * np.fft.fft2(wrapped)).real


def gabor_texture(width: int, height: int, n_orientations: int = 8, n_scales: int = 4, rng: SeededRng = SeededRng(0)) -> np.ndarray:
    _check_size(width, height)
    bank = gabor_bank(n_orientations, n_scales)
    gen = rng.generator()
    noise = gen.standard_normal((height, width))
    chosen = gen.random(len(bank)) < 0.5
    if not chosen.any():
        chosen[gen.integers(len(bank))] = True

    total = np.zeros((height, width))
    for kernel in (k for k, keep in zip(bank, chosen) if keep):
        total += apply_kernel(noise, kernel)
    lo, hi = total.min(), total.max()
    if hi == lo:
        return np.zeros_like(total)
    return (total - lo) / (hi - lo)


def power_law_field(width: int, height: int, beta: float, rng: SeededRng) -> np.ndarray:
    """Spectral synthesis with power spectrum ~ k^-beta; zero DC, standardised real part."""
    _check_size(width, height)
    gen = rng.generator()
    kx = np.fft.fftfreq(width)
    ky = np.fft.fftfreq(height)
    k = np.hypot(*np.meshgrid(kx, ky))
    k[0, 0] = 1.0
    amplitude = k ** (-beta / 2.0)
    amplitude[0, 0] = 0.0
    spectrum = amplitude * (gen.standard_normal((height, width)) + 1j * gen.standard_normal((height, width)))
    return _standardize(np.fft.ifft2(spectrum).real)


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def fbm_field(width: int, height: int, hurst: float = 0.7, rng: SeededRng = SeededRng(0)) -> np.ndarray:
    _check_size(width, height)
    if not 0.0 < hurst < 1.0:
        raise ParameterError(f"hurst {hurst} outside (0, 1)")
    if not (_is_pow2(width) and _is_pow2(height)):
        raise DimensionError(f"fbm_field needs power-of-two sizes, got {width}x{height}")
    # amplitude k^-(H+1)  ->  power k^-(2H+2)
    return power_law_field(width, height, 2.0 * hurst + 2.0, rng)


def next_pow2(n: int) -> int:
    return 1 << max(0, int(math.ceil(math.log2(max(n, 1)))))
