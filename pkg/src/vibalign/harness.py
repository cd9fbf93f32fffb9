"""Desk-scale experiments against the phantom.

* attenuation sweeps: mean average energy against offset, normalised by the
  sweep maximum;
* restoration grids: the controller started from a grid of offsets, scored
  by the ground-truth residual offset;
* snapshot sequences: frame and heatmap at every controller measurement.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import stats

from .controller import ControllerAbort, ControllerConfig, RestorationResult, run_alignment
from .errors import ConfigurationError
from .phantom import (
    FrameSequence,
    Mode,
    PhantomConfig,
    ProbeState,
    generate_sequence,
    ground_truth_energy,
    needle_visibility,
)
from .spectral import BandpassSpec, average_energy, energy_map, heatmap_for_display

log = logging.getLogger(__name__)

TRANSLATION_OFFSETS = (1.0, 1.5, 2.0, 2.5, 3.0)
ROTATION_OFFSETS = (2.5, 5.0, 7.5, 10.0, 12.5)
SWEEP_TRANSLATION = tuple(0.5 * k for k in range(1, 11))
SWEEP_ROTATION = ROTATION_OFFSETS

ABORTED = "Aborted"


def default_offsets(mode: Mode | str) -> tuple[float, ...]:
    return TRANSLATION_OFFSETS if Mode.parse(mode) is Mode.TRANSLATION else ROTATION_OFFSETS


def default_sweep_offsets(mode: Mode | str) -> tuple[float, ...]:
    return SWEEP_TRANSLATION if Mode.parse(mode) is Mode.TRANSLATION else SWEEP_ROTATION


def _fmt(value) -> str:
    """Shortest round-tripping text for a float."""
    return repr(float(value))


def sample_std(values) -> float:
    """Sample standard deviation (ddof=1); zero for fewer than two values."""
    values = np.asarray(values, dtype=np.float64)
    return float(values.std(ddof=1)) if values.size > 1 else 0.0


@dataclass
class Snapshot:
    frame: np.ndarray
    heatmap: np.ndarray
    pose: ProbeState
    visibility: float
    e_avg: float


class SimulatedProbe:
    """Phantom-backed probe actuator and image source in one object.

    Each acquisition draws a fresh noise stream, so repeated measurements at
    one pose differ but a whole run is reproducible from the phantom seed.
    """

    def __init__(
        self,
        phantom: PhantomConfig,
        pose: ProbeState,
        *,
        band: BandpassSpec | None = None,
        record_snapshots: bool = False,
        floor_percentile: float = 0.7,
    ):
        self.phantom = phantom
        self.pose = pose
        self.band = band or BandpassSpec()
        self.acquisitions = 0
        self.moves: list[float] = []
        self.record_snapshots = record_snapshots
        self.floor_percentile = floor_percentile
        self.snapshots: list[Snapshot] = []

    def move(self, delta: float) -> None:
        if not math.isfinite(delta):
            raise ValueError(f"non-finite move {delta!r}")
        self.moves.append(delta)
        self.pose = self.pose.moved(delta)

    def acquire(self, num_frames: int) -> FrameSequence:
        self.acquisitions += 1
        seq = generate_sequence(self.phantom, self.pose, num_frames, stream=self.acquisitions)
        if self.record_snapshots:
            emap = energy_map(seq, self.band)
            self.snapshots.append(
                Snapshot(
                    frame=seq.frames[0].copy(),
                    heatmap=heatmap_for_display(emap, self.floor_percentile),
                    pose=self.pose,
                    visibility=needle_visibility(self.phantom, self.pose),
                    e_avg=average_energy(emap).e_avg,
                )
            )
        return seq


def measure_energy(phantom: PhantomConfig, pose: ProbeState, band: BandpassSpec, num_frames: int, stream: int = 0) -> float:
    seq = generate_sequence(phantom, pose, num_frames, stream=stream)
    return average_energy(energy_map(seq, band)).e_avg


def estimate_gain(phantom: PhantomConfig, mode: Mode | str, offsets=None, num_frames: int = 60) -> float:
    """Proportional gain from the slope of a line fitted to energy vs. offset.

    Returns ``1 / |slope|``, i.e. unit loop gain over the fitted range: a
    step of size ``s`` there produces an energy change whose proportional
    response is again about ``s``.
    """
    mode = Mode.parse(mode)
    offsets = np.asarray(default_offsets(mode) if offsets is None else offsets, dtype=np.float64)
    clean = phantom.noiseless()
    energies = [ground_truth_energy(clean, ProbeState.at(mode, x), num_frames) for x in offsets]
    slope = np.polyfit(offsets, energies, 1)[0]
    if slope == 0:
        raise ConfigurationError("flat energy curve; cannot estimate a gain")
    return float(1.0 / abs(slope))


def default_controller(phantom: PhantomConfig, mode: Mode | str, **overrides) -> ControllerConfig:
    mode = Mode.parse(mode)
    if "k_p" not in overrides or overrides["k_p"] is None:
        overrides["k_p"] = estimate_gain(phantom, mode)
    return ControllerConfig(mode=mode, **overrides)


# -- attenuation sweeps ------------------------------------------------------


@dataclass
class SweepSpec:
    mode: Mode = Mode.TRANSLATION
    offsets: tuple[float, ...] | None = None
    repeats: int = 1
    seeds: tuple[int, ...] = (0,)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    band: BandpassSpec = field(default_factory=BandpassSpec)
    num_frames: int = 60

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        if self.offsets is None:
            self.offsets = default_sweep_offsets(self.mode)
        self.offsets = tuple(float(x) for x in self.offsets)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.offsets:
            raise ConfigurationError("sweep needs at least one offset")
        if any(b <= a for a, b in zip(self.offsets, self.offsets[1:])):
            raise ConfigurationError("sweep offsets must be strictly increasing")
        if self.repeats < 1:
            raise ConfigurationError("repeats must be at least 1")
        if not self.seeds:
            raise ConfigurationError("sweep needs at least one seed")


@dataclass
class SweepRow:
    offset: float
    mean: float
    std: float
    n: int
    normalized_mean: float
    normalized_std: float


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[SweepRow]
    # energies[offset_index][seed_index][repeat]
    energies: np.ndarray

    def normalized_means(self) -> np.ndarray:
        return np.array([r.normalized_mean for r in self.rows])

    def spearman_by_seed(self) -> list[float]:
        """Rank correlation of energy (repeat-averaged) against offset, per seed."""
        per_seed = self.energies.mean(axis=2)
        offsets = np.asarray(self.spec.offsets)
        return [float(stats.spearmanr(offsets, per_seed[:, s])[0]) for s in range(per_seed.shape[1])]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["offset", "mean", "std", "n", "normalized_mean", "normalized_std"])
        for r in self.rows:
            writer.writerow([_fmt(r.offset), _fmt(r.mean), _fmt(r.std), r.n, _fmt(r.normalized_mean), _fmt(r.normalized_std)])
        return buf.getvalue()


def run_attenuation_sweep(spec: SweepSpec) -> SweepResult:
    energies = np.empty((len(spec.offsets), len(spec.seeds), spec.repeats))
    for i, offset in enumerate(spec.offsets):
        pose = ProbeState.at(spec.mode, offset)
        for j, seed in enumerate(spec.seeds):
            phantom = spec.phantom.with_seed(seed)
            for k in range(spec.repeats):
                energies[i, j, k] = measure_energy(phantom, pose, spec.band, spec.num_frames, stream=k)
    flat = energies.reshape(len(spec.offsets), -1)
    means = flat.mean(axis=1)
    peak = means.max()
    scale = 1.0 / peak if peak > 0 else 0.0
    rows = []
    for offset, values, mean in zip(spec.offsets, flat, means):
        std = sample_std(values)
        rows.append(SweepRow(float(offset), float(mean), std, int(values.size), float(mean * scale), float(std * scale)))
    return SweepResult(spec, rows, energies)


# -- restoration experiments -------------------------------------------------


@dataclass
class RestorationExperiment:
    mode: Mode = Mode.TRANSLATION
    initial_offsets: tuple[float, ...] | None = None
    trials_per_offset: int = 4
    controller: ControllerConfig | None = None
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    base_seed: int = 0
    calibrate_reference: bool = True

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        if self.initial_offsets is None:
            self.initial_offsets = default_offsets(self.mode)
        self.initial_offsets = tuple(float(x) for x in self.initial_offsets)
        if any(x == 0 for x in self.initial_offsets):
            raise ConfigurationError("restoration offsets must be nonzero")
        if self.trials_per_offset < 1:
            raise ConfigurationError("trials_per_offset must be at least 1")
        if self.controller is None:
            self.controller = default_controller(self.phantom, self.mode)
        elif self.controller.mode is not self.mode:
            raise ConfigurationError("controller mode does not match experiment mode")

    def trial_seed(self, trial: int) -> int:
        return self.base_seed + trial


@dataclass
class TrialRecord:
    mode: Mode
    offset: float
    seed: int
    final_error: float
    iterations: int
    termination: str
    result: RestorationResult | None = None


@dataclass
class OffsetStatistics:
    offset: float
    mean: float
    std: float
    max: float
    n: int


@dataclass
class ErrorStatistics:
    per_offset: list[OffsetStatistics]
    pooled_mean: float
    pooled_std: float
    pooled_max: float
    n: int

    @classmethod
    def from_trials(cls, trials: list[TrialRecord]) -> "ErrorStatistics":
        by_offset: dict[float, list[float]] = {}
        for t in trials:
            by_offset.setdefault(t.offset, []).append(t.final_error)
        per = [
            OffsetStatistics(off, float(np.mean(errs)), sample_std(errs), float(np.max(errs)), len(errs))
            for off, errs in by_offset.items()
        ]
        errors = [t.final_error for t in trials]
        return cls(per, float(np.mean(errors)), sample_std(errors), float(np.max(errors)), len(errors))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["offset", "mean", "std", "max", "n"])
        for s in self.per_offset:
            writer.writerow([_fmt(s.offset), _fmt(s.mean), _fmt(s.std), _fmt(s.max), s.n])
        writer.writerow(["pooled", _fmt(self.pooled_mean), _fmt(self.pooled_std), _fmt(self.pooled_max), self.n])
        return buf.getvalue()


@dataclass
class ExperimentOutcome:
    experiment: RestorationExperiment
    trials: list[TrialRecord]
    statistics: ErrorStatistics
    failed: bool = False

    def trials_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["mode", "offset", "seed", "final_error", "iterations", "termination"])
        for t in self.trials:
            writer.writerow([t.mode.value, _fmt(t.offset), t.seed, _fmt(t.final_error), t.iterations, t.termination])
        return buf.getvalue()


def calibrated_reference(phantom: PhantomConfig, mode: Mode, cfg: ControllerConfig) -> float:
    """In-plane energy measured once at the aligned pose before offsetting."""
    # Stream 0 is never used by SimulatedProbe, whose acquisitions start at 1.
    return measure_energy(phantom, ProbeState.at(mode, 0.0), cfg.passband, cfg.frames_per_measurement, stream=0)


def run_trial(
    phantom: PhantomConfig,
    mode: Mode | str,
    offset: float,
    cfg: ControllerConfig,
    *,
    calibrate: bool = True,
    record_snapshots: bool = False,
) -> tuple[RestorationResult, SimulatedProbe]:
    mode = Mode.parse(mode)
    if calibrate and cfg.reference_energy is None:
        cfg = replace(cfg, reference_energy=calibrated_reference(phantom, mode, cfg))
    probe = SimulatedProbe(phantom, ProbeState.at(mode, offset), band=cfg.passband, record_snapshots=record_snapshots)
    result = run_alignment(probe, probe, cfg)
    result.final_true_offset = probe.pose.offset
    return result, probe


def run_restoration_experiment(
    exp: RestorationExperiment,
    *,
    on_trial: Callable[[TrialRecord, SimulatedProbe], None] | None = None,
    record_snapshots: bool = False,
) -> ExperimentOutcome:
    """Run every (offset, trial) pair in a fixed order.

    ``on_trial`` receives each finished record together with its probe, so
    callers can persist snapshots without holding all of them in memory.
    """
    trials: list[TrialRecord] = []
    failed = False
    for offset in exp.initial_offsets:
        for trial in range(exp.trials_per_offset):
            seed = exp.trial_seed(trial)
            phantom = exp.phantom.with_seed(seed)
            try:
                result, probe = run_trial(
                    phantom,
                    exp.mode,
                    offset,
                    exp.controller,
                    calibrate=exp.calibrate_reference,
                    record_snapshots=record_snapshots,
                )
            except ControllerAbort as exc:
                log.error("trial offset=%s seed=%s aborted: %s", offset, seed, exc)
                failed = True
                trials.append(TrialRecord(exp.mode, offset, seed, math.nan, len(exc.trajectory), ABORTED))
                continue
            record = TrialRecord(
                exp.mode,
                offset,
                seed,
                abs(result.final_true_offset),
                result.iterations,
                result.termination,
                result,
            )
            trials.append(record)
            if on_trial is not None:
                on_trial(record, probe)
    scored = [t for t in trials if t.termination != ABORTED]
    statistics = ErrorStatistics.from_trials(scored) if scored else ErrorStatistics([], math.nan, math.nan, math.nan, 0)
    return ExperimentOutcome(exp, trials, statistics, failed)


def snapshot_sequence(
    phantom: PhantomConfig,
    mode: Mode | str,
    offset: float,
    cfg: ControllerConfig | None = None,
    *,
    floor_percentile: float = 0.7,
) -> tuple[list[Snapshot], RestorationResult]:
    """Frame + display heatmap + pose at every controller measurement of one trial."""
    mode = Mode.parse(mode)
    cfg = cfg or default_controller(phantom, mode)
    if cfg.reference_energy is None:
        cfg = replace(cfg, reference_energy=calibrated_reference(phantom, mode, cfg))
    probe = SimulatedProbe(phantom, ProbeState.at(mode, offset), band=cfg.passband, record_snapshots=True, floor_percentile=floor_percentile)
    result = run_alignment(probe, probe, cfg)
    result.final_true_offset = probe.pose.offset
    return probe.snapshots, result
