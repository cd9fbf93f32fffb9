"""Synthetic B-mode phantom with a vibrating needle.

Each frame is composed as::

    frame = B + V(d) * N + A(d) * h(r) * sin(2 pi f t) * G + noise

``B`` is a smooth tissue texture, ``N`` the needle brightness mask, ``V`` the
out-of-plane visibility decay, ``A`` the vibration modulation decay, ``h`` the
lateral spread of vibration into tissue and ``G`` a fixed per-pixel gain.
Noise is multiplicative lognormal speckle followed by additive Gaussian noise,
clamped to [0, 1].  All random fields derive from ``PhantomConfig.rng_seed``.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import ndtri

from .errors import ConfigurationError, InputError

__all__ = [
    "Mode",
    "PhantomConfig",
    "ProbeState",
    "FrameSequence",
    "render_frame",
    "generate_sequence",
    "ground_truth_energy",
    "needle_visibility",
    "column_offsets_mm",
    "frame_rng",
]

# Levels of the 16-bit quantile table used for Gaussian draws.
_TABLE_SIZE = 1 << 16
_TEXTURE_RANGE = (0.25, 0.45)


class Mode(str, enum.Enum):
    TRANSLATION = "translation"
    ROTATION = "rotation"

    @classmethod
    def parse(cls, value: "Mode | str") -> "Mode":
        if isinstance(value, Mode):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigurationError(f"unknown mode {value!r}") from None


@dataclass(frozen=True)
class PhantomConfig:
    """Geometry, vibration and noise parameters of the phantom.

    Distances are in pixels unless suffixed otherwise; ``needle_span`` is the
    half-open column interval ``[start, stop)`` occupied by the needle.
    """

    image_height: int = 256
    image_width: int = 256
    mm_per_pixel: float = 0.2
    frame_rate: float = 30.0
    needle_depth_px: int = 128
    needle_span: tuple[int, int] = (40, 216)
    vibration_frequency: float = 2.0
    vibration_intensity_amplitude: float = 0.15
    visibility_sigma: float = 1.2
    vibration_sigma_translation: float = 2.0
    vibration_sigma_rotation: float = 8.0
    tissue_halo_lambda: float = 12.0
    speckle_level: float = 0.1
    additive_noise_level: float = 0.02
    needle_brightness: float = 0.3
    needle_half_thickness_px: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "needle_span", tuple(int(c) for c in self.needle_span))
        if self.image_height < 1 or self.image_width < 1:
            raise ConfigurationError("image dimensions must be positive")
        if self.frame_rate <= 2.0 * self.vibration_frequency:
            raise ConfigurationError(
                f"frame_rate {self.frame_rate} Hz must exceed twice the vibration "
                f"frequency {self.vibration_frequency} Hz"
            )
        if self.vibration_frequency <= 0:
            raise ConfigurationError("vibration_frequency must be positive")
        for name in (
            "mm_per_pixel",
            "visibility_sigma",
            "vibration_sigma_translation",
            "vibration_sigma_rotation",
            "tissue_halo_lambda",
        ):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be strictly positive")
        if not 0 < self.vibration_intensity_amplitude <= 1:
            raise ConfigurationError("vibration_intensity_amplitude must lie in (0, 1]")
        if self.speckle_level < 0 or self.additive_noise_level < 0:
            raise ConfigurationError("noise levels must be non-negative")
        if not 0 <= self.needle_brightness <= 1:
            raise ConfigurationError("needle_brightness must lie in [0, 1]")
        if self.needle_half_thickness_px < 0:
            raise ConfigurationError("needle_half_thickness_px must be non-negative")
        start, stop = self.needle_span
        if not 0 <= start < stop <= self.image_width:
            raise ConfigurationError(
                f"needle_span {self.needle_span} outside image width {self.image_width}"
            )
        if not 0 <= self.needle_depth_px < self.image_height:
            raise ConfigurationError("needle_depth_px outside image height")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.image_height, self.image_width)

    @property
    def is_noiseless(self) -> bool:
        return self.speckle_level == 0 and self.additive_noise_level == 0

    def noiseless(self) -> "PhantomConfig":
        return replace(self, speckle_level=0.0, additive_noise_level=0.0)

    def with_seed(self, seed: int) -> "PhantomConfig":
        return replace(self, rng_seed=int(seed))


@dataclass(frozen=True)
class ProbeState:
    """Ground-truth misalignment of the probe against the needle plane.

    Only the field matching ``mode`` is meaningful; the other is held at zero.
    """

    mode: Mode = Mode.TRANSLATION
    delta_p: float = 0.0
    delta_theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if self.mode is Mode.TRANSLATION and self.delta_theta != 0:
            raise ConfigurationError("translation pose must have delta_theta = 0")
        if self.mode is Mode.ROTATION and self.delta_p != 0:
            raise ConfigurationError("rotation pose must have delta_p = 0")

    @classmethod
    def at(cls, mode: Mode | str, offset: float) -> "ProbeState":
        mode = Mode.parse(mode)
        if mode is Mode.TRANSLATION:
            return cls(mode, delta_p=float(offset))
        return cls(mode, delta_theta=float(offset))

    @property
    def offset(self) -> float:
        """Signed offset along the active axis (mm or deg)."""
        return self.delta_p if self.mode is Mode.TRANSLATION else self.delta_theta

    def moved(self, delta: float) -> "ProbeState":
        return ProbeState.at(self.mode, self.offset + delta)


@dataclass(frozen=True, eq=False)
class FrameSequence:
    frames: np.ndarray  # (T, H, W) float32
    frame_rate: float
    timestamp_origin: float = 0.0

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3:
            raise InputError(f"frames must be a (T, H, W) array, got shape {frames.shape}")
        if frames.shape[0] < 2:
            raise InputError("a frame sequence needs at least 2 frames")
        if not self.frame_rate > 0:
            raise InputError("frame_rate must be positive")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1:]

    @property
    def duration(self) -> float:
        return self.num_frames / self.frame_rate

    def __eq__(self, other):
        if not isinstance(other, FrameSequence):
            return NotImplemented
        return (
            self.frame_rate == other.frame_rate
            and self.timestamp_origin == other.timestamp_origin
            and self.frames.dtype == other.frames.dtype
            and np.array_equal(self.frames, other.frames)
        )


@dataclass(frozen=True)
class _StaticFields:
    texture: np.ndarray
    needle_mask: np.ndarray
    halo: np.ndarray
    gain: np.ndarray
    speckle_table: np.ndarray = field(repr=False)


@functools.lru_cache(maxsize=1)
def _normal_quantiles() -> np.ndarray:
    return ndtri((np.arange(_TABLE_SIZE) + 0.5) / _TABLE_SIZE)


@functools.lru_cache(maxsize=32)
def _static_fields(cfg: PhantomConfig) -> _StaticFields:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, 0]))
    h, w = cfg.shape

    raw = gaussian_filter(rng.standard_normal((h, w)), sigma=6.0, mode="reflect")
    lo, hi = _TEXTURE_RANGE
    span = raw.max() - raw.min()
    unit = (raw - raw.min()) / span if span > 0 else np.zeros_like(raw)
    texture = lo + (hi - lo) * unit

    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    start, stop = cfg.needle_span
    dcol = np.maximum(np.maximum(start - cols, cols - (stop - 1)), 0)
    drow = rows - cfg.needle_depth_px
    halo = np.exp(-np.hypot(drow, dcol) / cfg.tissue_halo_lambda)

    needle_mask = np.where(
        (np.abs(drow) <= cfg.needle_half_thickness_px) & (dcol == 0), cfg.needle_brightness, 0.0
    )
    gain = rng.uniform(0.5, 1.5, size=(h, w))

    s = cfg.speckle_level
    speckle_table = np.exp(s * _normal_quantiles() - 0.5 * s * s)

    out = _StaticFields(
        texture=texture.astype(np.float32),
        needle_mask=needle_mask.astype(np.float32),
        halo=halo,
        gain=gain,
        speckle_table=speckle_table.astype(np.float32),
    )
    for arr in (out.texture, out.needle_mask, out.halo, out.gain, out.speckle_table):
        arr.flags.writeable = False
    return out


def column_offsets_mm(cfg: PhantomConfig, pose: ProbeState) -> np.ndarray:
    """Out-of-plane distance (mm) of each image column from the needle plane."""
    w = cfg.image_width
    if pose.mode is Mode.TRANSLATION:
        return np.full(w, float(pose.delta_p))
    pivot = (w - 1) / 2.0
    slope = math.tan(math.radians(pose.delta_theta))
    return slope * (np.arange(w) - pivot) * cfg.mm_per_pixel


def _visibility_columns(cfg: PhantomConfig, pose: ProbeState) -> np.ndarray:
    return np.exp(-((column_offsets_mm(cfg, pose) / cfg.visibility_sigma) ** 2))


def _amplitude_columns(cfg: PhantomConfig, pose: ProbeState) -> np.ndarray:
    offsets = column_offsets_mm(cfg, pose)
    amp = cfg.vibration_intensity_amplitude * np.exp(
        -(offsets**2) / (2.0 * cfg.vibration_sigma_translation**2)
    )
    if pose.mode is Mode.ROTATION:
        amp = amp * math.exp(-(pose.delta_theta**2) / (2.0 * cfg.vibration_sigma_rotation**2))
    return amp


def needle_visibility(cfg: PhantomConfig, pose: ProbeState) -> float:
    """Mean visibility factor V over the needle's columns (1 = fully in plane)."""
    start, stop = cfg.needle_span
    return float(_visibility_columns(cfg, pose)[start:stop].mean())


@functools.lru_cache(maxsize=64)
def _pose_terms(cfg: PhantomConfig, pose: ProbeState) -> tuple[np.ndarray, np.ndarray]:
    fields = _static_fields(cfg)
    still = fields.texture + fields.needle_mask * _visibility_columns(cfg, pose).astype(np.float32)
    modulation = (_amplitude_columns(cfg, pose)[None, :] * fields.halo * fields.gain).astype(
        np.float32
    )
    still.flags.writeable = False
    modulation.flags.writeable = False
    return still, modulation


def frame_rng(cfg: PhantomConfig, frame_index: int, stream: int = 0) -> np.random.Generator:
    """Independent noise stream for one frame of one acquisition."""
    seq = np.random.SeedSequence([cfg.rng_seed, 1, int(stream), int(frame_index)])
    return np.random.Generator(np.random.SFC64(seq))


def render_frame(
    cfg: PhantomConfig,
    pose: ProbeState,
    t: float,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Render one H x W float32 frame at time ``t`` seconds.

    ``rng`` supplies the noise; when omitted, the stream for frame index
    ``round(t * frame_rate)`` of acquisition 0 is used.
    """
    if t < 0:
        raise InputError("t must be non-negative")
    still, modulation = _pose_terms(cfg, pose)
    phase = math.sin(2.0 * math.pi * cfg.vibration_frequency * t)
    frame = still + modulation * np.float32(phase)
    if not cfg.is_noiseless:
        if rng is None:
            rng = frame_rng(cfg, round(t * cfg.frame_rate))
        fields = _static_fields(cfg)
        if cfg.speckle_level > 0:
            idx = rng.integers(0, _TABLE_SIZE, size=cfg.shape, dtype=np.uint16)
            frame *= fields.speckle_table[idx]
        if cfg.additive_noise_level > 0:
            idx = rng.integers(0, _TABLE_SIZE, size=cfg.shape, dtype=np.uint16)
            z = _normal_quantiles().astype(np.float32)[idx]
            frame += np.float32(cfg.additive_noise_level) * z
    np.clip(frame, 0.0, 1.0, out=frame)
    return frame


def generate_sequence(
    cfg: PhantomConfig,
    pose: ProbeState,
    num_frames: int,
    *,
    stream: int = 0,
    timestamp_origin: float = 0.0,
) -> FrameSequence:
    """Sample ``num_frames`` frames at ``t = origin + k / frame_rate``.

    ``stream`` selects an independent noise realisation so repeated
    acquisitions at one pose differ while staying reproducible.
    """
    if num_frames < 2:
        raise InputError(f"num_frames must be at least 2, got {num_frames}")
    frames = np.empty((num_frames, *cfg.shape), dtype=np.float32)
    for k in range(num_frames):
        t = timestamp_origin + k / cfg.frame_rate
        frames[k] = render_frame(cfg, pose, t, frame_rng(cfg, k, stream))
    return FrameSequence(frames, cfg.frame_rate, timestamp_origin)


def ground_truth_energy(cfg: PhantomConfig, pose: ProbeState, num_frames: int = 60) -> float:
    """Closed-form mean passband energy of the noiseless phantom at ``pose``.

    Exact when the window holds a whole number of vibration cycles and the
    vibration tone falls inside the passband.
    """
    fields = _static_fields(cfg)
    amp = _amplitude_columns(cfg, pose)[None, :] * fields.halo * fields.gain
    return float(np.sum(amp * amp) * num_frames / 2.0 / amp.size)
