"""Matplotlib figures for the CLI report path (Agg backend, files only)."""

from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .controller import RestorationResult  # noqa: E402
from .harness import ExperimentOutcome, Snapshot, SweepResult  # noqa: E402
from .phantom import Mode  # noqa: E402

_UNITS = {Mode.TRANSLATION: "mm", Mode.ROTATION: "deg"}
_STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path: str | os.PathLike) -> None:
    fig.savefig(path)
    plt.close(fig)


def plot_attenuation(sweeps: Sequence[SweepResult], path: str | os.PathLike) -> None:
    """Normalised mean energy against offset, one panel per sweep."""
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(sweeps), figsize=(3.6 * len(sweeps), 3.0), squeeze=False)
        for ax, sweep in zip(axes[0], sweeps):
            x = np.array([r.offset for r in sweep.rows])
            y = np.array([r.normalized_mean for r in sweep.rows])
            err = np.array([r.normalized_std for r in sweep.rows])
            ax.errorbar(x, y, yerr=err, marker="o", ms=4, capsize=3, lw=1.2)
            ax.set_xlabel(f"{sweep.spec.mode.value} offset ({_UNITS[sweep.spec.mode]})")
            ax.set_ylabel("normalised average energy")
            ax.set_ylim(bottom=0)
        fig.tight_layout()
        _save(fig, path)


def plot_restoration(outcomes: Sequence[ExperimentOutcome], path: str | os.PathLike) -> None:
    """Box plot of final error per initial offset."""
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(outcomes), figsize=(3.6 * len(outcomes), 3.0), squeeze=False)
        for ax, outcome in zip(axes[0], outcomes):
            mode = outcome.experiment.mode
            offsets = outcome.experiment.initial_offsets
            data = [[t.final_error for t in outcome.trials if t.offset == off and np.isfinite(t.final_error)] for off in offsets]
            ax.boxplot(data, tick_labels=[f"{o:g}" for o in offsets])
            ax.set_xlabel(f"initial offset ({_UNITS[mode]})")
            ax.set_ylabel(f"final error ({_UNITS[mode]})")
        fig.tight_layout()
        _save(fig, path)


def plot_snapshots(snapshots: Sequence[Snapshot], path: str | os.PathLike, max_columns: int = 6) -> None:
    """Frame (top) and display heatmap (bottom) for evenly spaced measurements."""
    if not snapshots:
        raise ValueError("no snapshots to plot")
    idx = np.unique(np.linspace(0, len(snapshots) - 1, min(max_columns, len(snapshots))).round().astype(int))
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(2, len(idx), figsize=(1.9 * len(idx), 4.0), squeeze=False)
        for col, i in enumerate(idx):
            snap = snapshots[i]
            axes[0, col].imshow(snap.frame, cmap="gray", vmin=0, vmax=1)
            axes[1, col].imshow(snap.heatmap, cmap="inferno", vmin=0, vmax=1)
            axes[0, col].set_title(f"#{i}  {snap.pose.offset:+.2f}", fontsize=8)
            for ax in axes[:, col]:
                ax.set_xticks([])
                ax.set_yticks([])
        fig.tight_layout()
        _save(fig, path)


def plot_trajectory(
    result: RestorationResult,
    path: str | os.PathLike,
    mode: Mode | str = Mode.TRANSLATION,
    low_energy_fraction: float = 0.2,
) -> None:
    """Cumulative displacement and average energy per measurement."""
    mode = Mode.parse(mode)
    rows = result.trajectory
    k = np.arange(len(rows))
    with plt.rc_context(_STYLE):
        fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(4.5, 4.0))
        ax1.plot(k, [r.cumulative_displacement for r in rows], marker=".", lw=1)
        ax1.set_ylabel(f"displacement ({_UNITS[mode]})")
        ax2.plot(k, [r.e_avg for r in rows], marker=".", lw=1, color="C3")
        ax2.axhline(result.low_energy_reference * low_energy_fraction, ls=":", color="0.5", lw=0.8)
        ax2.set_ylabel("average energy")
        ax2.set_xlabel("measurement")
        ax1.set_title(result.termination, fontsize=9)
        fig.tight_layout()
        _save(fig, path)


def plot_heatmap(frame: np.ndarray, heatmap: np.ndarray, path: str | os.PathLike) -> None:
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(6.0, 3.0))
        axes[0].imshow(frame, cmap="gray", vmin=0, vmax=1)
        axes[0].set_title("first frame")
        axes[1].imshow(heatmap, cmap="inferno", vmin=0, vmax=1)
        axes[1].set_title("passband energy")
        for ax in axes:
            ax.set_xticks([])
            ax.set_yticks([])
        fig.tight_layout()
        _save(fig, path)
