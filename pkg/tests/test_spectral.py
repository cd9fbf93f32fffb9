import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vibalign.errors import ConfigurationError, InputError
from vibalign.phantom import FrameSequence
from vibalign.spectral import (
    BandpassSpec,
    average_energy,
    bandpass_filter_pixel,
    energy_map,
    heatmap_for_display,
    passband_energy,
    pixel_energy,
)

FS = 30.0
T = 60
BAND = BandpassSpec()


def tone(freq, amp=1.0, n=T, fs=FS, phase=0.0):
    t = np.arange(n) / fs
    return amp * np.sin(2 * np.pi * freq * t + phase)


def literal_energy(x):
    return pixel_energy(bandpass_filter_pixel(x, FS, BAND))


def test_mask_matches_explicit_bin_loop():
    mask = BAND.mask(T, FS)
    expected = np.zeros(T, dtype=bool)
    for k in range(T):
        f = min(k, T - k) * FS / T
        expected[k] = 1.5 < f < 2.5
    np.testing.assert_array_equal(mask, expected)
    # 2 Hz lands on bin 4 and its mirror only.
    assert np.flatnonzero(mask).tolist() == [4, 56]
    assert BAND.bins(T, FS).tolist() == [4]


@pytest.mark.parametrize("amp", [0.1, 0.5, 1.0])
def test_in_band_tone_energy(amp):
    x = tone(2.0, amp)
    # An in-band tone passes unchanged; its energy is amp^2 * T / 2.
    expected = amp**2 * T / 2
    assert literal_energy(x) == pytest.approx(expected, rel=1e-12)
    assert passband_energy(x, FS, BAND) == pytest.approx(expected, rel=1e-12)
    np.testing.assert_allclose(bandpass_filter_pixel(x, FS, BAND), x, atol=1e-12)


@pytest.mark.parametrize("freq", [0.0, 0.5, 1.0, 1.5, 2.5, 3.0, 5.0, 10.0])
def test_out_of_band_tones_vanish(freq):
    x = tone(freq, 0.3, phase=0.4) if freq else np.full(T, 0.7)
    assert literal_energy(x) <= 1e-20
    assert passband_energy(x, FS, BAND) <= 1e-20


def test_boundary_bins_are_excluded():
    # 1.5 Hz and 2.5 Hz sit exactly on bins 3 and 5.
    assert not BAND.mask(T, FS)[[3, 5, 55, 57]].any()


def test_superposition_of_bands():
    inside, outside = tone(2.0, 0.2, phase=1.1), tone(5.0, 0.4)
    assert literal_energy(inside + outside) == pytest.approx(literal_energy(inside), rel=1e-12)


finite = st.floats(-1.0, 1.0, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, T, elements=finite))
def test_fast_and_literal_agree(x):
    fast = passband_energy(x, FS, BAND)
    lit = literal_energy(x)
    assert fast == pytest.approx(lit, rel=1e-9, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, T, elements=finite), st.integers(0, T - 1))
def test_circular_shift_invariance(x, shift):
    assert literal_energy(np.roll(x, shift)) == pytest.approx(literal_energy(x), rel=1e-9, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, T, elements=finite), st.floats(-10, 10, allow_nan=False))
def test_quadratic_scaling(x, c):
    assert passband_energy(c * x, FS, BAND) == pytest.approx(c * c * passband_energy(x, FS, BAND), rel=1e-9, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, T, elements=finite))
def test_energy_non_negative_and_bounded_by_total(x):
    e = literal_energy(x)
    assert e >= 0
    assert e <= np.sum((x - x.mean()) ** 2) + 1e-12


@pytest.mark.parametrize("n", [2, 7, 31, 60, 61, 128])
def test_odd_and_even_lengths(n):
    rng = np.random.default_rng(n)
    x = rng.standard_normal((n, 5))
    fast = passband_energy(x, FS, BAND)
    lit = pixel_energy(bandpass_filter_pixel(x, FS, BAND))
    np.testing.assert_allclose(fast, lit, rtol=1e-9, atol=1e-14)


def test_energy_map_methods_agree_on_cube():
    rng = np.random.default_rng(3)
    seq = FrameSequence(rng.random((T, 12, 9)).astype(np.float32), FS)
    fast = energy_map(seq)
    lit = energy_map(seq, method="literal")
    assert fast.shape == (12, 9)
    np.testing.assert_allclose(fast.values, lit.values, rtol=1e-9)
    assert average_energy(fast).e_avg == pytest.approx(fast.values.mean())


def test_constant_cube_has_zero_energy():
    seq = FrameSequence(np.full((T, 4, 4), 0.4, np.float32), FS)
    assert average_energy(energy_map(seq)).e_avg == pytest.approx(0.0, abs=1e-20)


def test_validation():
    with pytest.raises(ConfigurationError):
        BandpassSpec(2.5, 1.5)
    with pytest.raises(ConfigurationError):
        BandpassSpec(boundary_rule="inclusive")
    with pytest.raises(ConfigurationError):
        BandpassSpec(1.5, 2.5).validate_for(4.0)
    with pytest.raises(InputError):
        bandpass_filter_pixel(np.ones(1), FS, BAND)
    with pytest.raises(ValueError):
        energy_map(FrameSequence(np.zeros((4, 2, 2)), FS), method="fourier")


def test_heatmap_floor_and_scale():
    values = np.arange(100, dtype=float).reshape(10, 10)
    heat = heatmap_for_display(values, 0.7)
    assert heat.max() == 1.0
    floor = np.quantile(values, 0.7)
    assert np.all(heat[values < floor] == 0)
    np.testing.assert_allclose(heat[values >= floor], values[values >= floor] / 99.0)
    assert not heatmap_for_display(np.zeros((3, 3))).any()
    with pytest.raises(ConfigurationError):
        heatmap_for_display(values, 1.0)
