import numpy as np
import pytest

from nucsynth.errors import DimensionError, ParameterError
from nucsynth.fields import (
    apply_kernel, fbm_field, gabor_bank, gabor_texture, gaussian_random_field,
    next_pow2, perlin_field, perlin_loop, perlin_octave, power_law_field,
)
from nucsynth.rng import SeededRng, image_stream, stable_hash


def _radial_slope(field, lo_bin=8, hi_bin=64):
    """Independent log-log PSD slope over integer radial bins [lo_bin, hi_bin)."""
    n = field.shape[0]
    power = np.abs(np.fft.fft2(field)) ** 2
    f = np.fft.fftfreq(n)
    bins = np.rint(np.hypot(*np.meshgrid(f, f)) * n).astype(int).ravel()
    sums = np.bincount(bins, weights=power.ravel())
    counts = np.bincount(bins)
    k = np.arange(lo_bin, hi_bin)
    return np.polyfit(np.log(k / n), np.log(sums[k] / counts[k]), 1)[0]


def test_stable_hash_and_streams_are_deterministic():
    assert stable_hash(1, 2) == stable_hash(1, 2)
    assert stable_hash(1, 2) != stable_hash(2, 1)
    assert image_stream(5, 3) == image_stream(5, 3)
    a = SeededRng(9).child(4).generator().random(4)
    b = SeededRng(9).child(4).generator().random(4)
    assert np.array_equal(a, b)


def test_zero_size_field_raises():
    with pytest.raises(DimensionError):
        perlin_field(0, 16)


def test_perlin_single_octave_is_reproducible():
    a = perlin_field(64, 48, octaves=1, rng=SeededRng(11))
    b = perlin_field(64, 48, octaves=1, rng=SeededRng(11))
    assert np.array_equal(a, b)
    assert a.shape == (48, 64)


def test_perlin_rescaled_range_and_mean():
    f = perlin_field(256, 256, octaves=6, persistence=0.5, rng=SeededRng(1))
    assert f.min() >= -1.0 and f.max() <= 1.0
    assert abs(f.mean()) <= 0.05


def test_perlin_octave_residual_is_half_the_second_layer():
    rng = SeededRng(2)
    two = perlin_field(96, 96, octaves=2, base_scale=32, rng=rng, rescale=False)
    one = perlin_field(96, 96, octaves=1, base_scale=32, rng=rng, rescale=False)
    layer = perlin_octave(96, 96, 16, rng.child(1))
    assert np.allclose(two - one, 0.5 * layer, atol=1e-9)


def test_perlin_loop_is_bounded():
    loop = perlin_loop(128, 6, np.random.default_rng(0))
    assert np.abs(loop).max() == pytest.approx(1.0)


def test_grf_is_standardised():
    f = gaussian_random_field(512, 512, 20, SeededRng(3))
    assert abs(f.mean()) <= 0.02
    assert 0.95 <= f.var() <= 1.05


def test_grf_autocorrelation_is_gaussian():
    # white noise filtered by a Gaussian of width L has autocorrelation exp(-lag^2 / (4 L^2))
    vals = []
    for seed in range(5):
        f = gaussian_random_field(512, 512, 10, SeededRng(seed))
        for axis in (0, 1):
            vals.append(np.mean(f * np.roll(f, 20, axis=axis)) / f.var())
    assert abs(np.mean(vals) - np.exp(-1.0)) <= 0.1


def test_grf_rejects_long_correlation():
    with pytest.raises(ParameterError):
        gaussian_random_field(64, 64, 40, SeededRng(0))
    with pytest.raises(ParameterError):
        gaussian_random_field(64, 64, 0, SeededRng(0))


def test_grf_reproducible():
    assert np.array_equal(gaussian_random_field(64, 64, 8, SeededRng(5)), gaussian_random_field(64, 64, 8, SeededRng(5)))


def test_gabor_bank_size_and_dc_free():
    bank = gabor_bank(8, 4)
    assert len(bank) == 32
    flat = np.ones((64, 64))
    for kernel in bank:
        assert np.abs(apply_kernel(flat, kernel)).max() < 1e-8


def test_gabor_texture_reproducible_and_unit_range():
    a = gabor_texture(64, 64, rng=SeededRng(6))
    assert np.array_equal(a, gabor_texture(64, 64, rng=SeededRng(6)))
    assert a.min() == pytest.approx(0.0) and a.max() == pytest.approx(1.0)


@pytest.mark.parametrize("hurst", [0.7, 0.5])
def test_fbm_spectral_slope(hurst):
    slope = _radial_slope(fbm_field(256, 256, hurst, SeededRng(4)))
    assert abs(slope + (2 * hurst + 2)) <= 0.2


def test_power_law_field_slope():
    assert abs(_radial_slope(power_law_field(256, 256, 2.0, SeededRng(8))) + 2.0) <= 0.2


def test_fbm_requires_power_of_two():
    with pytest.raises(DimensionError):
        fbm_field(100, 128, 0.7, SeededRng(0))


def test_fbm_reproducible():
    assert np.array_equal(fbm_field(64, 64, 0.7, SeededRng(1)), fbm_field(64, 64, 0.7, SeededRng(1)))


def test_next_pow2():
    assert [next_pow2(n) for n in (1, 2, 3, 64, 65)] == [1, 2, 4, 64, 128]
