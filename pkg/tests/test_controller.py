import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vibalign.controller import (
    CONVERGED,
    MAX_ITERATIONS,
    TRAJECTORY_COLUMNS,
    ControllerAbort,
    ControllerConfig,
    determine_direction,
    eliminate_misalignment,
    run_alignment,
)
from vibalign.errors import ConfigurationError
from vibalign.phantom import FrameSequence

FS = 30.0


class FakeProbe:
    """One-pixel source whose passband energy equals ``energy_fn(position)``."""

    def __init__(self, energy_fn, position=0.0, fail_after=None, refuse_moves=False):
        self.energy_fn = energy_fn
        self.position = position
        self.moves = []
        self.acquisitions = 0
        self.fail_after = fail_after
        self.refuse_moves = refuse_moves

    def move(self, delta):
        if self.refuse_moves:
            raise RuntimeError("joint limit")
        self.moves.append(delta)
        self.position += delta

    def acquire(self, num_frames):
        self.acquisitions += 1
        if self.fail_after is not None and self.acquisitions > self.fail_after:
            raise OSError("probe disconnected")
        energy = self.energy_fn(self.position)
        amp = math.sqrt(2.0 * energy / num_frames)
        t = np.arange(num_frames) / FS
        signal = 0.5 + amp * np.sin(2 * np.pi * 2.0 * t)
        return FrameSequence(signal.reshape(-1, 1, 1), FS)


def peak(x, width=1.5):
    return 0.03 * math.exp(-(x * x) / (2 * width * width)) + 0.003


def config(**kw):
    kw.setdefault("k_p", 100.0)
    return ControllerConfig(**kw)


def audit(result, cfg):
    rows = result.trajectory
    assert [r.iteration for r in rows] == list(range(len(rows)))
    assert len(rows) == result.iterations + 2
    for prev, row in zip(rows[1:], rows[2:]):
        assert row.phase == 2
        assert abs(row.commanded_step) == cfg.clamp_step(cfg.k_p * abs(prev.e_diff))
    assert rows[-1].terminated == result.termination
    assert all(r.terminated == "" for r in rows[:-1])


@pytest.mark.parametrize("start,expected", [(2.0, -1), (-2.0, 1)])
def test_direction_points_uphill(start, expected):
    probe = FakeProbe(peak, start)
    direction, e0, e1 = determine_direction(probe, probe, config())
    assert direction == expected
    assert e0 == pytest.approx(peak(start), rel=1e-9)
    assert e1 == pytest.approx(peak(start + 0.5), rel=1e-9)
    assert probe.moves == [0.5]


def test_direction_tie_keeps_positive():
    probe = FakeProbe(lambda x: 0.01)
    direction, e0, e1 = determine_direction(probe, probe, config())
    assert e0 == e1
    assert direction == 1


@pytest.mark.parametrize("start", [-3.0, -1.0, 1.0, 2.5, 3.0])
def test_converges_near_peak(start):
    cfg = config()
    probe = FakeProbe(peak, start)
    result = run_alignment(probe, probe, cfg)
    assert result.termination == CONVERGED
    assert abs(probe.position) < 0.6
    assert result.final_displacement == pytest.approx(probe.position - start, abs=1e-12)
    audit(result, cfg)


def test_cumulative_displacement_is_exact_sum():
    probe = FakeProbe(peak, 3.0)
    result = run_alignment(probe, probe, config())
    running = 0.0
    for row, move in zip(result.trajectory[1:], probe.moves):
        running += move
        assert row.cumulative_displacement == running
        assert row.commanded_step == move


def test_max_iterations_on_unsettled_signal():
    rng = np.random.default_rng(0)
    cfg = config(max_iterations=7, energy_threshold=1e-9)
    probe = FakeProbe(lambda x: 0.01 + 0.005 * rng.random())
    result = run_alignment(probe, probe, cfg)
    assert result.termination == MAX_ITERATIONS
    assert result.iterations == 7
    assert probe.acquisitions == 9
    audit(result, cfg)


def test_low_energy_guard_blocks_convergence_on_plateau():
    # Flat, tiny energy far from the needle; reference seeded with the in-plane level.
    cfg = config(reference_energy=0.03, max_iterations=20)
    probe = FakeProbe(lambda x: 1e-4, 10.0)
    result = run_alignment(probe, probe, cfg)
    assert result.termination == MAX_ITERATIONS
    phase2 = [r for r in result.trajectory if r.phase == 2]
    assert all(r.low_energy_hold for r in phase2)
    # Held steps still follow the clamp (minimum step while diff is ~0).
    assert all(abs(r.commanded_step) == cfg.step_clamp[0] for r in phase2)


def test_guard_releases_once_energy_recovers():
    cfg = config(reference_energy=0.033)
    probe = FakeProbe(peak, 5.0)
    result = run_alignment(probe, probe, cfg)
    assert result.converged
    assert result.trajectory[-1].e_avg > cfg.low_energy_fraction * result.low_energy_reference


@settings(max_examples=30, deadline=None)
@given(
    start=st.floats(-4.0, 4.0),
    k_p=st.floats(10.0, 400.0),
    width=st.floats(0.5, 3.0),
    max_iterations=st.integers(1, 30),
)
def test_totality_and_step_law(start, k_p, width, max_iterations):
    cfg = config(k_p=k_p, max_iterations=max_iterations)
    probe = FakeProbe(lambda x: peak(x, width), start)
    result = run_alignment(probe, probe, cfg)
    assert result.termination in (CONVERGED, MAX_ITERATIONS)
    assert probe.acquisitions <= cfg.max_iterations + 2
    audit(result, cfg)
    if result.converged:
        last = result.trajectory[-1]
        assert last.e_avg > cfg.low_energy_fraction * result.low_energy_reference
        assert abs(last.e_diff) < result.energy_threshold


def test_threshold_from_phase_one():
    cfg = config()
    probe = FakeProbe(peak, 2.0)
    result = run_alignment(probe, probe, cfg)
    first_two = [r.e_avg for r in result.trajectory[:2]]
    assert result.energy_threshold == pytest.approx(0.02 * max(first_two))
    fixed = run_alignment(FakeProbe(peak, 2.0), FakeProbe(peak, 2.0), config(energy_threshold=1e-3))
    assert fixed.energy_threshold == 1e-3


def test_standalone_phase_two_brackets_pose():
    cfg = config()
    probe = FakeProbe(peak, 2.0)
    result = eliminate_misalignment(probe, probe, cfg, direction=1)
    assert result.converged
    assert abs(probe.position) < 0.6
    assert result.trajectory[0].phase == 1 and result.trajectory[1].phase == 1


def test_source_failure_aborts_with_partial_log():
    probe = FakeProbe(peak, 2.0, fail_after=4)
    with pytest.raises(ControllerAbort) as info:
        run_alignment(probe, probe, config())
    assert len(info.value.trajectory) == 4


def test_actuator_refusal_aborts():
    probe = FakeProbe(peak, 2.0, refuse_moves=True)
    with pytest.raises(ControllerAbort) as info:
        run_alignment(probe, probe, config())
    assert len(info.value.trajectory) == 1


@pytest.mark.parametrize(
    "kwargs",
    [
        {"k_p": 0},
        {"k_p": 1, "direction_step": 0},
        {"k_p": 1, "step_clamp": (1.0, 0.5)},
        {"k_p": 1, "max_iterations": 0},
        {"k_p": 1, "low_energy_fraction": 1.0},
        {"k_p": 1, "energy_threshold": 0.0},
        {"k_p": 1, "frames_per_measurement": 1},
        {"k_p": 1, "mode": "pitch"},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        ControllerConfig(**kwargs)


def test_mode_defaults():
    t = ControllerConfig(k_p=1)
    r = ControllerConfig(k_p=1, mode="rotation")
    assert (t.direction_step, t.step_clamp) == (0.5, (0.1, 1.0))
    assert (r.direction_step, r.step_clamp) == (1.0, (0.25, 1.0))
    assert t.clamp_step(5.0) == 1.0 and t.clamp_step(0.0) == 0.1 and t.clamp_step(0.3) == 0.3


def test_trajectory_csv_round_trip():
    probe = FakeProbe(peak, 2.0)
    result = run_alignment(probe, probe, config())
    rows = list(csv.DictReader(io.StringIO(result.to_csv())))
    assert tuple(rows[0].keys()) == TRAJECTORY_COLUMNS
    assert rows[0]["e_diff"] == ""
    assert len(rows) == len(result.trajectory)
    for parsed, row in zip(rows, result.trajectory):
        assert float(parsed["e_avg"]) == row.e_avg
        assert float(parsed["cumulative_displacement"]) == row.cumulative_displacement
    assert rows[-1]["terminated"] == CONVERGED
