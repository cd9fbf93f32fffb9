"""Per-pixel passband energy of a frame sequence.

Each pixel's intensity series is filtered with a binary DFT mask that keeps
the bins strictly inside ``(f_low, f_high)`` together with their conjugate
mirrors.  The energy of the filtered series is the pixel's vibration energy,
and the image mean of those energies is the scalar alignment metric.

Two routes compute the same map:

* ``literal``: FFT, mask, inverse FFT, then sum of squares per pixel.
* ``fast`` (default): Parseval's identity on the in-band bins only, using a
  partial DFT so neither a full transform nor the inverse is needed.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError
from .phantom import FrameSequence

__all__ = [
    "BandpassSpec",
    "EnergyMap",
    "EnergyMetric",
    "bandpass_filter_pixel",
    "pixel_energy",
    "energy_map",
    "average_energy",
    "heatmap_for_display",
]

_IMAG_TOLERANCE = 1e-10


@dataclass(frozen=True)
class BandpassSpec:
    f_low: float = 1.5
    f_high: float = 2.5
    boundary_rule: str = "exclusive"

    def __post_init__(self):
        if self.boundary_rule != "exclusive":
            raise ConfigurationError(f"unsupported boundary rule {self.boundary_rule!r}")
        if not 0 < self.f_low < self.f_high:
            raise ConfigurationError(
                f"passband ({self.f_low}, {self.f_high}) must satisfy 0 < f_low < f_high"
            )

    def validate_for(self, frame_rate: float) -> None:
        if not self.f_high < frame_rate / 2.0:
            raise ConfigurationError(
                f"passband upper edge {self.f_high} Hz is not below Nyquist "
                f"({frame_rate / 2.0} Hz)"
            )

    def mask(self, num_samples: int, frame_rate: float) -> np.ndarray:
        """Boolean mask over the full length-``num_samples`` DFT."""
        self.validate_for(frame_rate)
        freqs = np.abs(np.fft.fftfreq(num_samples, d=1.0 / frame_rate))
        return (freqs > self.f_low) & (freqs < self.f_high)

    def bins(self, num_samples: int, frame_rate: float) -> np.ndarray:
        """Positive-frequency bin indices kept by the mask."""
        self.validate_for(frame_rate)
        k = np.arange(num_samples // 2 + 1)
        freqs = k * frame_rate / num_samples
        return k[(freqs > self.f_low) & (freqs < self.f_high)]


@dataclass(frozen=True, eq=False)
class EnergyMap:
    values: np.ndarray  # (H, W) float64, non-negative
    num_frames: int
    frame_rate: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class EnergyMetric:
    e_avg: float


def _check_series(signal: np.ndarray, dtype=np.float64) -> np.ndarray:
    signal = np.asarray(signal, dtype=dtype)
    if signal.ndim < 1 or signal.shape[0] < 2:
        raise InputError("need at least 2 samples along the time axis")
    return signal


def _centered(signal: np.ndarray) -> np.ndarray:
    """Float64 copy of ``signal`` minus its mean along axis 0.

    DC never lies in the band (f_low > 0); removing it first keeps constant
    pixels at exactly zero instead of rounding residue.
    """
    mean = signal.mean(axis=0, dtype=np.float64)
    return np.subtract(signal, mean, dtype=np.float64)


def bandpass_filter_pixel(signal, frame_rate: float, band: BandpassSpec) -> np.ndarray:
    """Real part of ``ifft(mask * fft(signal))`` along axis 0."""
    signal = _check_series(signal)
    mask = band.mask(signal.shape[0], frame_rate)
    mask = mask.reshape((-1,) + (1,) * (signal.ndim - 1))
    signal = _centered(signal)
    filtered = np.fft.ifft(mask * np.fft.fft(signal, axis=0), axis=0)
    residue = np.max(np.abs(filtered.imag), initial=0.0)
    if residue > _IMAG_TOLERANCE * max(1.0, np.max(np.abs(signal), initial=0.0)):
        raise AssertionError(f"mask is not conjugate-symmetric (imag residue {residue:g})")
    return filtered.real


def pixel_energy(filtered) -> float | np.ndarray:
    """Sum of squared samples along axis 0."""
    filtered = _check_series(filtered)
    energy = np.einsum("t...,t...->...", filtered, filtered)
    return float(energy) if energy.ndim == 0 else energy


@functools.lru_cache(maxsize=16)
def _partial_dft_basis(num_samples: int, bins: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    t = np.arange(num_samples)
    k = np.asarray(bins)[:, None]
    # Nyquist and DC have no mirror partner, every other bin counts twice.
    weights = np.where((k[:, 0] == 0) | (2 * k[:, 0] == num_samples), 1.0, 2.0) / num_samples
    basis = np.concatenate(
        [np.cos(2 * np.pi * k * t / num_samples), np.sin(2 * np.pi * k * t / num_samples)]
    )
    basis.flags.writeable = False
    return basis, np.concatenate([weights, weights])


def passband_energy(signals, frame_rate: float, band: BandpassSpec) -> np.ndarray:
    """Frequency-domain passband energy along axis 0 without an inverse transform.

    Uses ``sum_t |s'_t|^2 = (1/T) sum_k |M_k X_k|^2`` restricted to the kept bins.
    """
    signals = _check_series(signals, dtype=None)
    n = signals.shape[0]
    bins = tuple(int(k) for k in band.bins(n, frame_rate))
    if not bins:
        return np.zeros(signals.shape[1:])
    basis, weights = _partial_dft_basis(n, bins)
    flat = _centered(signals.reshape(n, -1))
    coeffs = basis @ flat
    energy = weights @ (coeffs * coeffs)
    return energy.reshape(signals.shape[1:])


def energy_map(seq: FrameSequence, band: BandpassSpec | None = None, *, method: str = "fast") -> EnergyMap:
    """Per-pixel passband energy of ``seq``.

    ``method`` is ``"fast"`` (partial DFT + Parseval) or ``"literal"``
    (FFT, mask, inverse FFT, sum of squares).
    """
    band = band or BandpassSpec()
    band.validate_for(seq.frame_rate)
    frames = seq.frames
    if method == "fast":
        values = passband_energy(frames, seq.frame_rate, band)
    elif method == "literal":
        values = pixel_energy(bandpass_filter_pixel(frames, seq.frame_rate, band))
    else:
        raise ValueError(f"unknown method {method!r}")
    return EnergyMap(np.asarray(values, dtype=np.float64), seq.num_frames, seq.frame_rate)


def average_energy(emap: EnergyMap | np.ndarray) -> EnergyMetric:
    values = emap.values if isinstance(emap, EnergyMap) else np.asarray(emap, dtype=np.float64)
    return EnergyMetric(float(values.mean()))


def heatmap_for_display(emap: EnergyMap | np.ndarray, floor_percentile: float = 0.7) -> np.ndarray:
    """Zero entries below the ``floor_percentile`` quantile, then divide by the max."""
    if not 0 <= floor_percentile < 1:
        raise ConfigurationError("floor_percentile must lie in [0, 1)")
    values = emap.values if isinstance(emap, EnergyMap) else np.asarray(emap, dtype=np.float64)
    peak = values.max(initial=0.0)
    if peak <= 0:
        return np.zeros_like(values, dtype=np.float64)
    floor = np.quantile(values, floor_percentile)
    return np.where(values < floor, 0.0, values) / peak
