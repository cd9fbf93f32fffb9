import csv
import io
import math

import numpy as np
import pytest

from vibalign import harness
from vibalign.controller import ControllerAbort
from vibalign.errors import ConfigurationError
from vibalign.harness import (
    ABORTED,
    RestorationExperiment,
    SimulatedProbe,
    SweepSpec,
    default_controller,
    estimate_gain,
    run_attenuation_sweep,
    run_restoration_experiment,
    sample_std,
    snapshot_sequence,
)
from vibalign.phantom import Mode, ProbeState, ground_truth_energy


def test_sample_std():
    assert sample_std([1.0]) == 0.0
    assert sample_std([1.0, 3.0]) == pytest.approx(math.sqrt(2.0))
    assert sample_std([2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]) == pytest.approx(np.std([2, 4, 4, 4, 5, 5, 7, 9], ddof=1))


def test_simulated_probe_streams(small_phantom):
    probe = SimulatedProbe(small_phantom, ProbeState.at("translation", 1.0))
    a = probe.acquire(4)
    b = probe.acquire(4)
    assert probe.acquisitions == 2 and a != b
    probe.move(-0.25)
    assert probe.pose.offset == 0.75
    with pytest.raises(ValueError):
        probe.move(float("nan"))


def test_estimate_gain_is_inverse_slope(small_phantom):
    offsets = (1.0, 2.0, 3.0)
    clean = small_phantom.noiseless()
    e = [ground_truth_energy(clean, ProbeState.at("translation", x)) for x in offsets]
    slope = np.polyfit(offsets, e, 1)[0]
    assert estimate_gain(small_phantom, "translation", offsets) == pytest.approx(1 / abs(slope))
    cfg = default_controller(small_phantom, "rotation", max_iterations=9)
    assert cfg.mode is Mode.ROTATION and cfg.max_iterations == 9 and cfg.k_p > 0


@pytest.mark.parametrize("mode", ["translation", "rotation"])
def test_noiseless_sweep_strictly_decreasing(small_phantom, mode):
    result = run_attenuation_sweep(SweepSpec(mode=mode, seeds=(0, 1), phantom=small_phantom.noiseless()))
    norm = result.normalized_means()
    assert norm[0] == 1.0
    assert np.all(np.diff(norm) < 0)
    assert result.spearman_by_seed() == pytest.approx([-1.0, -1.0])


def test_sweep_csv_matches_energies(small_phantom):
    spec = SweepSpec(mode="translation", offsets=(0.5, 1.5, 3.0), seeds=(0, 1, 2), repeats=2, phantom=small_phantom)
    result = run_attenuation_sweep(spec)
    rows = list(csv.DictReader(io.StringIO(result.to_csv())))
    assert [float(r["offset"]) for r in rows] == [0.5, 1.5, 3.0]
    for i, row in enumerate(rows):
        values = result.energies[i].ravel()
        assert int(row["n"]) == 6
        assert float(row["mean"]) == values.mean()
        assert abs(float(row["std"]) - np.std(values, ddof=1)) <= 1e-12


def test_sweep_spec_validation():
    with pytest.raises(ConfigurationError):
        SweepSpec(offsets=(2.0, 1.0))
    with pytest.raises(ConfigurationError):
        SweepSpec(seeds=())
    with pytest.raises(ConfigurationError):
        SweepSpec(repeats=0)
    assert SweepSpec(mode="rotation").offsets == (2.5, 5.0, 7.5, 10.0, 12.5)
    assert SweepSpec().offsets == tuple(0.5 * k for k in range(1, 11))


def small_experiment(phantom, **kw):
    kw.setdefault("initial_offsets", (1.0, 3.0))
    kw.setdefault("trials_per_offset", 2)
    return RestorationExperiment(mode="translation", phantom=phantom, **kw)


def test_restoration_reproducible_and_stats_consistent(small_phantom):
    a = run_restoration_experiment(small_experiment(small_phantom))
    b = run_restoration_experiment(small_experiment(small_phantom))
    assert a.trials_csv() == b.trials_csv()
    assert a.statistics.to_csv() == b.statistics.to_csv()

    trials = list(csv.DictReader(io.StringIO(a.trials_csv())))
    assert [int(t["seed"]) for t in trials] == [0, 1, 0, 1]
    errors = np.array([float(t["final_error"]) for t in trials])
    assert abs(a.statistics.pooled_std - np.std(errors, ddof=1)) <= 1e-12
    assert a.statistics.pooled_mean == pytest.approx(errors.mean(), abs=1e-15)
    for stat in a.statistics.per_offset:
        sub = np.array([float(t["final_error"]) for t in trials if float(t["offset"]) == stat.offset])
        assert abs(stat.std - np.std(sub, ddof=1)) <= 1e-12
        assert stat.max == sub.max()
    for t in a.trials:
        assert t.final_error == abs(t.result.final_true_offset)


def test_restoration_aborted_trials_are_reported(small_phantom, monkeypatch):
    real = harness.run_trial
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 2:
            raise ControllerAbort("simulated fault", [])
        return real(*args, **kwargs)

    monkeypatch.setattr(harness, "run_trial", flaky)
    outcome = run_restoration_experiment(small_experiment(small_phantom))
    assert outcome.failed
    assert [t.termination for t in outcome.trials].count(ABORTED) == 1
    assert outcome.statistics.n == 3


def test_restoration_callback_sees_snapshots(small_phantom):
    seen = []
    run_restoration_experiment(
        small_experiment(small_phantom, initial_offsets=(2.0,), trials_per_offset=1),
        on_trial=lambda rec, probe: seen.append((rec.offset, len(probe.snapshots), probe.acquisitions)),
        record_snapshots=True,
    )
    assert len(seen) == 1 and seen[0][1] == seen[0][2]


def test_experiment_validation(small_phantom):
    with pytest.raises(ConfigurationError):
        small_experiment(small_phantom, initial_offsets=(0.0,))
    with pytest.raises(ConfigurationError):
        small_experiment(small_phantom, trials_per_offset=0)
    with pytest.raises(ConfigurationError):
        small_experiment(small_phantom, controller=default_controller(small_phantom, "rotation"))


def test_snapshot_sequence_from_invisible_pose(small_phantom):
    snaps, result = snapshot_sequence(small_phantom, "translation", 3.0)
    assert len(snaps) == len(result.trajectory)
    assert snaps[0].visibility < 0.01
    assert result.converged
    assert snaps[-1].visibility >= 0.8
    assert snaps[0].heatmap.max() == 1.0


def test_snapshot_sequence_from_aligned_pose(small_phantom):
    snaps, _ = snapshot_sequence(small_phantom, "translation", 0.0)
    assert snaps[0].visibility == 1.0
    assert snaps[-1].visibility >= 0.8
