"""``vibalign`` command line: simulate, analyze, align, sweep, restore-exp.

Every command writes its artifacts under ``--out-dir`` together with
``config.toml``, the fully resolved configuration of the run.  Failures
print one JSON object on stderr and exit with a code from ``EXIT_CODES``.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import plotting
from .config import RunConfig, dump_config, load_config
from .controller import ControllerConfig
from .errors import AcquisitionError, ConfigurationError, InputError
from .fileio import FrameCubeError, read_frame_cube, write_frame_cube, write_pgm
from .harness import (
    ABORTED,
    ExperimentOutcome,
    RestorationExperiment,
    SimulatedProbe,
    SweepSpec,
    TrialRecord,
    run_attenuation_sweep,
    run_restoration_experiment,
    snapshot_sequence,
)
from .phantom import Mode, ProbeState, generate_sequence
from .spectral import average_energy, energy_map, heatmap_for_display

log = logging.getLogger("vibalign")

EXIT_CODES = {
    "ok": 0,
    "internal": 1,
    "usage": 2,
    "config": 3,
    "io": 4,
    "format": 5,
    "acquisition": 6,
    "input": 7,
}

_DEFAULT_OFFSET = {Mode.TRANSLATION: 3.0, Mode.ROTATION: 12.5}


class ExperimentFailed(AcquisitionError):
    """Some trials of an experiment aborted; artifacts were still written."""


def _classify(exc: BaseException) -> str:
    if isinstance(exc, click.UsageError):
        return "usage"
    if isinstance(exc, ConfigurationError):
        return "config"
    if isinstance(exc, FrameCubeError):
        return "format"
    if isinstance(exc, AcquisitionError):
        return "acquisition"
    if isinstance(exc, InputError):
        return "input"
    if isinstance(exc, OSError):
        return "io"
    return "internal"


def _fail(exc: BaseException) -> int:
    kind = _classify(exc)
    message = exc.format_message() if isinstance(exc, click.ClickException) else str(exc)
    line = {"error": kind, "type": type(exc).__name__, "exit_code": EXIT_CODES[kind], "message": " ".join(message.split())}
    click.echo(json.dumps(line), err=True)
    return EXIT_CODES[kind]


# -- shared plumbing ---------------------------------------------------------


def _common(func):
    func = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="TOML run configuration.")(func)
    func = click.option("--seed", type=int, default=None, help="Phantom seed; overrides [phantom] rng_seed.")(func)
    func = click.option("--out-dir", type=click.Path(file_okay=False), default="out", show_default=True)(func)
    return func


def _noiseless_flag(func):
    return click.option("--noiseless", is_flag=True, help="Disable speckle and additive noise.")(func)


def _mode_option(allow_both: bool, default: str):
    choices = ["translation", "rotation"] + (["both"] if allow_both else [])
    return click.option("--mode", type=click.Choice(choices), default=default, show_default=True)


def _modes(value: str) -> list[Mode]:
    return [Mode.TRANSLATION, Mode.ROTATION] if value == "both" else [Mode.parse(value)]


def _prepare(config_path, seed, out_dir, noiseless=False) -> tuple[RunConfig, Path]:
    cfg = load_config(config_path).with_seed(seed)
    if noiseless:
        cfg = cfg.noiseless()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _echo_config(cfg: RunConfig, out: Path, resolved: dict[Mode, ControllerConfig] | None = None) -> None:
    dump_config(cfg, out / "config.toml", resolved)


def _echo_csv(text: str) -> None:
    for row in csv.reader(text.splitlines()):
        click.echo("  ".join(f"{c:>22}" if i else f"{c:>10}" for i, c in enumerate(row)))


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


# -- commands ----------------------------------------------------------------


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def cli(verbose: int):
    """Needle-vibration energy analysis and probe alignment simulator."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@_common
@_noiseless_flag
@_mode_option(False, "translation")
@click.option("--offset", type=float, default=0.0, show_default=True, help="Probe offset (mm or deg).")
@click.option("--frames", type=int, default=60, show_default=True)
@click.option("--output", default="frames.vibe", show_default=True, help="Cube file name inside out-dir.")
def simulate(config_path, seed, out_dir, noiseless, mode, offset, frames, output):
    """Render a phantom sequence to a frame-cube file."""
    cfg, out = _prepare(config_path, seed, out_dir, noiseless)
    pose = ProbeState.at(mode, offset)
    seq = generate_sequence(cfg.phantom, pose, frames)
    path = out / output
    write_frame_cube(seq, path)
    _echo_config(cfg, out)
    t, h, w = seq.frames.shape
    click.echo(f"wrote {path} ({h}x{w}x{t} @ {seq.frame_rate:g} Hz)")


@cli.command()
@click.argument("cube", type=click.Path(dir_okay=False))
@_common
@click.option("--floor-percentile", type=float, default=None, help="Heatmap display floor; default from config.")
def analyze(cube, config_path, seed, out_dir, floor_percentile):
    """Energy map, display heatmap and average energy of a recorded cube."""
    cfg, out = _prepare(config_path, seed, out_dir)
    seq = read_frame_cube(cube)
    start = time.perf_counter()
    emap = energy_map(seq, cfg.band, method=cfg.analyze.method)
    elapsed_ms = (time.perf_counter() - start) * 1e3
    e_avg = average_energy(emap).e_avg
    floor = cfg.analyze.floor_percentile if floor_percentile is None else floor_percentile
    heat = heatmap_for_display(emap, floor)

    np.save(out / "energy_map.npy", emap.values)
    write_pgm(heat, out / "heatmap.pgm")
    plotting.plot_heatmap(seq.frames[0], heat, out / "heatmap.png")
    t, h, w = seq.frames.shape
    summary = (
        "e_avg,height,width,frames,frame_rate,energy_map_ms\n"
        f"{e_avg!r},{h},{w},{t},{seq.frame_rate!r},{elapsed_ms:.3f}\n"
    )
    _write(out / "summary.csv", summary)
    _echo_config(cfg, out)
    click.echo(f"E_Avg={e_avg!r}")
    click.echo(f"energy_map_ms={elapsed_ms:.3f}")


@cli.command()
@_common
@_noiseless_flag
@_mode_option(False, "translation")
@click.option("--offset", type=float, default=None, help="Initial offset; 3 mm / 12.5 deg by default.")
@click.option("--no-snapshots", is_flag=True, help="Skip the per-measurement greymaps.")
def align(config_path, seed, out_dir, noiseless, mode, offset, no_snapshots):
    """Run both controller phases against the simulated probe."""
    cfg, out = _prepare(config_path, seed, out_dir, noiseless)
    mode = Mode.parse(mode)
    offset = _DEFAULT_OFFSET[mode] if offset is None else offset
    ctrl = cfg.controller_for(mode)
    snapshots, result = snapshot_sequence(cfg.phantom, mode, offset, ctrl, floor_percentile=cfg.analyze.floor_percentile)

    _write(out / "trajectory.csv", result.to_csv())
    plotting.plot_trajectory(result, out / "trajectory.png", mode, ctrl.low_energy_fraction)
    plotting.plot_snapshots(snapshots, out / "snapshots.png")
    if not no_snapshots:
        _write_snapshots(snapshots, out / "snapshots")
    _echo_config(cfg, out, {mode: ctrl})
    click.echo(
        f"termination={result.termination} iterations={result.iterations} "
        f"displacement={result.final_displacement!r} final_offset={result.final_true_offset!r}"
    )


def _write_snapshots(snapshots, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for i, snap in enumerate(snapshots):
        write_pgm(snap.frame, directory / f"{i:03d}_frame.pgm")
        write_pgm(snap.heatmap, directory / f"{i:03d}_heatmap.pgm")


@cli.command()
@_common
@_noiseless_flag
@_mode_option(True, "both")
@click.option("--seeds", "num_seeds", type=int, default=None, help="Number of seeds; default from config.")
def sweep(config_path, seed, out_dir, noiseless, mode, num_seeds):
    """Attenuation table: mean average energy against offset."""
    cfg, out = _prepare(config_path, seed, out_dir, noiseless)
    n = cfg.sweep.num_seeds if num_seeds is None else num_seeds
    if n < 1:
        raise ConfigurationError("--seeds must be at least 1")
    seeds = tuple(cfg.phantom.rng_seed + i for i in range(n))
    results = []
    for m in _modes(mode):
        spec = SweepSpec(
            mode=m,
            offsets=cfg.sweep.offsets(m),
            repeats=cfg.sweep.repeats,
            seeds=seeds,
            phantom=cfg.phantom,
            band=cfg.band,
            num_frames=cfg.sweep.num_frames,
        )
        result = run_attenuation_sweep(spec)
        results.append(result)
        text = result.to_csv()
        _write(out / f"sweep_{m.value}.csv", text)
        rho = result.spearman_by_seed()
        click.echo(f"[{m.value}] worst per-seed Spearman rho={max(rho)!r}")
        _echo_csv(text)
    plotting.plot_attenuation(results, out / "attenuation.png")
    _echo_config(cfg, out)


@cli.command("restore-exp")
@_common
@_noiseless_flag
@_mode_option(True, "both")
@click.option("--trials", type=int, default=None, help="Trials per offset; default from config.")
@click.option("--snapshots/--no-snapshots", default=False, help="Write greymaps for every trial.")
def restore_exp(config_path, seed, out_dir, noiseless, mode, trials, snapshots):
    """Restoration grid: controller runs from each initial offset."""
    cfg, out = _prepare(config_path, seed, out_dir, noiseless)
    per_offset = cfg.restoration.trials_per_offset if trials is None else trials
    outcomes: list[ExperimentOutcome] = []
    resolved = {}
    for m in _modes(mode):
        ctrl = cfg.controller_for(m)
        resolved[m] = ctrl
        exp = RestorationExperiment(
            mode=m,
            initial_offsets=cfg.restoration.offsets(m),
            trials_per_offset=per_offset,
            controller=ctrl,
            phantom=cfg.phantom,
            base_seed=cfg.phantom.rng_seed,
            calibrate_reference=cfg.restoration.calibrate_reference,
        )

        def save(record: TrialRecord, probe: SimulatedProbe, m=m):
            trial_dir = out / "trials" / f"{m.value}_{record.offset:g}_seed{record.seed}"
            _write_snapshots(probe.snapshots, trial_dir)
            probe.snapshots.clear()

        outcome = run_restoration_experiment(exp, on_trial=save if snapshots else None, record_snapshots=snapshots)
        outcomes.append(outcome)
        _write(out / f"trials_{m.value}.csv", outcome.trials_csv())
        stats_text = outcome.statistics.to_csv()
        _write(out / f"stats_{m.value}.csv", stats_text)
        converged = sum(t.termination == "Converged" for t in outcome.trials)
        click.echo(f"[{m.value}] converged {converged}/{len(outcome.trials)}")
        _echo_csv(stats_text)
    plotting.plot_restoration(outcomes, out / "restoration.png")
    _echo_config(cfg, out, resolved)
    aborted = sum(t.termination == ABORTED for o in outcomes for t in o.trials)
    if aborted:
        raise ExperimentFailed(f"{aborted} trial(s) aborted; see trials_*.csv")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, prog_name="vibalign", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo(json.dumps({"error": "internal", "type": "Abort", "exit_code": 1, "message": "aborted"}), err=True)
        return 1
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit code
        log.debug("command failed", exc_info=True)
        return _fail(exc)
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
