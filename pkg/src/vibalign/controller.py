"""Two-phase proportional probe repositioning driven by the average energy.

Phase 1 takes one exploratory step of fixed size and compares the energy
before and after to choose a direction.  Phase 2 keeps stepping with a
magnitude proportional to the last energy difference until two consecutive
readings differ by less than the threshold while the current reading is above
the low-energy filter.

The controller only talks to two interfaces, ``ImageSource`` and
``ProbeActuator``; the simulator-backed implementations live in
``vibalign.harness``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, fields as dc_fields
from typing import Protocol

from .errors import AcquisitionError, ConfigurationError
from .phantom import FrameSequence, Mode
from .spectral import BandpassSpec, average_energy, energy_map

__all__ = [
    "ControllerConfig",
    "ImageSource",
    "ProbeActuator",
    "TrajectoryRow",
    "RestorationResult",
    "ControllerAbort",
    "Session",
    "determine_direction",
    "eliminate_misalignment",
    "run_alignment",
    "CONVERGED",
    "MAX_ITERATIONS",
]

log = logging.getLogger(__name__)

CONVERGED = "Converged"
MAX_ITERATIONS = "MaxIterations"

_MODE_DEFAULTS = {
    Mode.TRANSLATION: {"direction_step": 0.5, "step_clamp": (0.1, 1.0)},
    Mode.ROTATION: {"direction_step": 1.0, "step_clamp": (0.25, 1.0)},
}


class ImageSource(Protocol):
    def acquire(self, num_frames: int) -> FrameSequence: ...


class ProbeActuator(Protocol):
    def move(self, delta: float) -> None: ...


@dataclass(frozen=True)
class ControllerConfig:
    """Gains, step sizes and termination settings.

    Units of ``k_p``, ``direction_step`` and ``step_clamp`` follow ``mode``
    (mm for translation, degrees for rotation).  ``energy_threshold=None``
    fixes the threshold at ``threshold_fraction`` of the larger Phase-1
    reading.  ``reference_energy`` optionally seeds the low-energy reference
    with a calibrated in-plane energy; the reference is otherwise the running
    maximum of all readings.  With a calibrated reference the default
    threshold becomes ``calibrated_threshold_fraction`` of it instead.
    """

    k_p: float
    mode: Mode = Mode.TRANSLATION
    direction_step: float | None = None
    step_clamp: tuple[float, float] | None = None
    energy_threshold: float | None = None
    threshold_fraction: float = 0.02
    calibrated_threshold_fraction: float = 0.005
    low_energy_fraction: float = 0.20
    passband: BandpassSpec = field(default_factory=BandpassSpec)
    frames_per_measurement: int = 60
    max_iterations: int = 50
    reference_energy: float | None = None

    def __post_init__(self):
        mode = Mode.parse(self.mode)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "k_p", float(self.k_p))
        defaults = _MODE_DEFAULTS[mode]
        step = defaults["direction_step"] if self.direction_step is None else self.direction_step
        object.__setattr__(self, "direction_step", float(step))
        clamp = defaults["step_clamp"] if self.step_clamp is None else self.step_clamp
        object.__setattr__(self, "step_clamp", (float(clamp[0]), float(clamp[1])))

        if not self.k_p > 0:
            raise ConfigurationError("k_p must be positive")
        if not self.direction_step > 0:
            raise ConfigurationError("direction_step must be positive")
        if not 0 < self.low_energy_fraction < 1:
            raise ConfigurationError("low_energy_fraction must lie in (0, 1)")
        lo, hi = self.step_clamp
        if not 0 <= lo <= hi:
            raise ConfigurationError(f"step_clamp {self.step_clamp} must satisfy 0 <= min <= max")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be at least 1")
        if self.frames_per_measurement < 2:
            raise ConfigurationError("frames_per_measurement must be at least 2")
        if self.energy_threshold is not None and not self.energy_threshold > 0:
            raise ConfigurationError("energy_threshold must be positive")
        if not 0 < self.threshold_fraction < 1:
            raise ConfigurationError("threshold_fraction must lie in (0, 1)")
        if not 0 < self.calibrated_threshold_fraction < 1:
            raise ConfigurationError("calibrated_threshold_fraction must lie in (0, 1)")
        if self.reference_energy is not None and self.reference_energy < 0:
            raise ConfigurationError("reference_energy must be non-negative")

    def clamp_step(self, magnitude: float) -> float:
        lo, hi = self.step_clamp
        return min(max(magnitude, lo), hi)


@dataclass(frozen=True)
class TrajectoryRow:
    iteration: int
    phase: int
    commanded_step: float
    cumulative_displacement: float
    e_avg: float
    e_diff: float
    direction: int
    terminated: str = ""
    low_energy_hold: bool = False


TRAJECTORY_COLUMNS = tuple(f.name for f in dc_fields(TrajectoryRow))


@dataclass
class RestorationResult:
    trajectory: list[TrajectoryRow]
    iterations: int
    termination: str
    low_energy_reference: float
    energy_threshold: float
    final_true_offset: float | None = None

    @property
    def converged(self) -> bool:
        return self.termination == CONVERGED

    @property
    def final_displacement(self) -> float:
        return self.trajectory[-1].cumulative_displacement

    def to_csv(self) -> str:
        buf = io.StringIO()
        write_trajectory_csv(self.trajectory, buf)
        return buf.getvalue()


def write_trajectory_csv(rows, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(TRAJECTORY_COLUMNS)
    for row in rows:
        writer.writerow(
            [
                row.iteration,
                row.phase,
                repr(float(row.commanded_step)),
                repr(float(row.cumulative_displacement)),
                repr(float(row.e_avg)),
                "" if math.isnan(row.e_diff) else repr(float(row.e_diff)),
                row.direction,
                row.terminated,
                int(row.low_energy_hold),
            ]
        )


class ControllerAbort(AcquisitionError):
    """Raised when the source or actuator fails; carries the partial trajectory."""

    def __init__(self, message: str, trajectory: list[TrajectoryRow]):
        super().__init__(message)
        self.trajectory = list(trajectory)


class Session:
    """Bookkeeping shared by both phases: measurements, moves, the log."""

    def __init__(self, actuator: ProbeActuator, source: ImageSource, cfg: ControllerConfig):
        self.actuator = actuator
        self.source = source
        self.cfg = cfg
        self.trajectory: list[TrajectoryRow] = []
        self.displacement = 0.0
        self.reference = cfg.reference_energy or 0.0
        self.measurements = 0

    def measure(self) -> float:
        try:
            seq = self.source.acquire(self.cfg.frames_per_measurement)
            value = average_energy(energy_map(seq, self.cfg.passband)).e_avg
        except Exception as exc:
            raise ControllerAbort(f"acquisition failed: {exc}", self.trajectory) from exc
        self.measurements += 1
        # Running maximum over the session; never decreases.
        self.reference = max(self.reference, value)
        return value

    def move(self, delta: float) -> None:
        try:
            self.actuator.move(delta)
        except Exception as exc:
            raise ControllerAbort(f"actuator refused move {delta!r}: {exc}", self.trajectory) from exc
        self.displacement += float(delta)

    def record(self, **kwargs) -> TrajectoryRow:
        row = TrajectoryRow(cumulative_displacement=self.displacement, **kwargs)
        self.trajectory.append(row)
        return row


def determine_direction(
    actuator: ProbeActuator,
    source: ImageSource,
    cfg: ControllerConfig,
    session: Session | None = None,
) -> tuple[int, float, float]:
    """Phase 1: returns ``(direction, e_start, e_after_step)``.

    Energy falling after the exploratory step reverses the direction; a rise
    or an exact tie keeps ``+1``.
    """
    session = session or Session(actuator, source, cfg)
    e0 = session.measure()
    session.record(iteration=0, phase=1, commanded_step=0.0, e_avg=e0, e_diff=math.nan, direction=1)
    session.move(cfg.direction_step)
    e1 = session.measure()
    diff = e0 - e1
    direction = -1 if diff > 0 else 1
    session.record(
        iteration=1, phase=1, commanded_step=cfg.direction_step, e_avg=e1, e_diff=diff, direction=direction
    )
    return direction, e0, e1


def eliminate_misalignment(
    actuator: ProbeActuator,
    source: ImageSource,
    cfg: ControllerConfig,
    direction: int,
    session: Session | None = None,
) -> RestorationResult:
    """Phase 2: proportional stepping until the threshold test passes.

    Without a ``session`` (i.e. called standalone) two fresh measurements
    bracket the current pose first, one step apart along ``direction``.
    """
    if session is None:
        session = Session(actuator, source, cfg)
        e_prev = session.measure()
        session.record(iteration=0, phase=1, commanded_step=0.0, e_avg=e_prev, e_diff=math.nan, direction=direction)
        session.move(direction * cfg.direction_step)
        e_last = session.measure()
        diff = e_prev - e_last
        if diff > 0:
            direction = -direction
        session.record(
            iteration=1,
            phase=1,
            commanded_step=direction * cfg.direction_step,
            e_avg=e_last,
            e_diff=diff,
            direction=direction,
        )
    else:
        last = session.trajectory[-1]
        e_last, diff = last.e_avg, last.e_diff

    if cfg.energy_threshold is not None:
        threshold = cfg.energy_threshold
    elif cfg.reference_energy:
        threshold = cfg.calibrated_threshold_fraction * cfg.reference_energy
    else:
        threshold = cfg.threshold_fraction * max(r.e_avg for r in session.trajectory if r.phase == 1)

    iterations = 0
    termination = MAX_ITERATIONS
    while True:
        floor = cfg.low_energy_fraction * session.reference
        if abs(diff) < threshold:
            if e_last > floor:
                termination = CONVERGED
                break
            # Threshold met below the filter: keep moving with the proportional law.
            hold = True
        else:
            hold = False
        if iterations >= cfg.max_iterations:
            break

        magnitude = cfg.clamp_step(cfg.k_p * abs(float(diff)))
        step = direction * magnitude
        session.move(step)
        e_new = session.measure()
        diff = e_last - e_new
        e_last = e_new
        iterations += 1
        if diff > 0:
            direction = -direction
        session.record(
            iteration=iterations + 1,
            phase=2,
            commanded_step=step,
            e_avg=e_new,
            e_diff=diff,
            direction=direction,
            low_energy_hold=hold,
        )

    last = session.trajectory[-1]
    session.trajectory[-1] = TrajectoryRow(**{**last.__dict__, "terminated": termination})
    log.debug("phase 2 finished: %s after %d steps", termination, iterations)
    return RestorationResult(
        trajectory=session.trajectory,
        iterations=iterations,
        termination=termination,
        low_energy_reference=session.reference,
        energy_threshold=threshold,
    )


def run_alignment(actuator: ProbeActuator, source: ImageSource, cfg: ControllerConfig) -> RestorationResult:
    """Full run: Phase 1 then Phase 2 on one shared session."""
    session = Session(actuator, source, cfg)
    direction, _, _ = determine_direction(actuator, source, cfg, session)
    return eliminate_misalignment(actuator, source, cfg, direction, session)
