"""Run configuration: a TOML file with one table per component.

Every table is optional and every key inside it falls back to the default
of the matching dataclass.  Unknown tables and unknown keys are rejected.

Example::

    [phantom]
    speckle_level = 0.1
    rng_seed = 3

    [band]
    f_low = 1.5
    f_high = 2.5

    [controller]
    max_iterations = 40

    [controller.rotation]
    step_clamp = [0.25, 1.0]

    [sweep]
    num_seeds = 10

    [restoration]
    trials_per_offset = 4
"""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import tomli_w

from .controller import ControllerConfig
from .errors import ConfigurationError
from .harness import ROTATION_OFFSETS, SWEEP_ROTATION, SWEEP_TRANSLATION, TRANSLATION_OFFSETS, default_controller
from .phantom import Mode, PhantomConfig
from .spectral import BandpassSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ControllerSection",
    "SweepSettings",
    "RestorationSettings",
    "AnalyzeSettings",
    "RunConfig",
    "load_config",
    "parse_config",
    "dump_config",
]

_MODE_TABLES = ("translation", "rotation")


@dataclass(frozen=True)
class ControllerSection:
    """Controller settings as written in the file; ``None`` means "use the default".

    ``per_mode`` holds the ``[controller.translation]`` and
    ``[controller.rotation]`` tables, which override the shared keys.
    """

    k_p: float | None = None
    direction_step: float | None = None
    step_clamp: tuple[float, float] | None = None
    energy_threshold: float | None = None
    threshold_fraction: float = 0.02
    calibrated_threshold_fraction: float = 0.005
    low_energy_fraction: float = 0.20
    frames_per_measurement: int = 60
    max_iterations: int = 50
    per_mode: dict[str, dict[str, Any]] = field(default_factory=dict)

    def resolve(self, mode: Mode | str, phantom: PhantomConfig, band: BandpassSpec) -> ControllerConfig:
        mode = Mode.parse(mode)
        values = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "per_mode"}
        values.update(self.per_mode.get(mode.value, {}))
        return default_controller(phantom, mode, passband=band, **values)


@dataclass(frozen=True)
class SweepSettings:
    num_seeds: int = 10
    repeats: int = 1
    num_frames: int = 60
    translation_offsets: tuple[float, ...] = SWEEP_TRANSLATION
    rotation_offsets: tuple[float, ...] = SWEEP_ROTATION

    def offsets(self, mode: Mode | str) -> tuple[float, ...]:
        return self.translation_offsets if Mode.parse(mode) is Mode.TRANSLATION else self.rotation_offsets


@dataclass(frozen=True)
class RestorationSettings:
    trials_per_offset: int = 4
    calibrate_reference: bool = True
    translation_offsets: tuple[float, ...] = TRANSLATION_OFFSETS
    rotation_offsets: tuple[float, ...] = ROTATION_OFFSETS

    def offsets(self, mode: Mode | str) -> tuple[float, ...]:
        return self.translation_offsets if Mode.parse(mode) is Mode.TRANSLATION else self.rotation_offsets


@dataclass(frozen=True)
class AnalyzeSettings:
    floor_percentile: float = 0.7
    method: str = "fast"

    def __post_init__(self):
        if self.method not in ("fast", "literal"):
            raise ConfigurationError(f"analyze.method must be 'fast' or 'literal', got {self.method!r}")
        if not 0 <= self.floor_percentile < 1:
            raise ConfigurationError("analyze.floor_percentile must lie in [0, 1)")


@dataclass(frozen=True)
class RunConfig:
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    band: BandpassSpec = field(default_factory=BandpassSpec)
    controller: ControllerSection = field(default_factory=ControllerSection)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    restoration: RestorationSettings = field(default_factory=RestorationSettings)
    analyze: AnalyzeSettings = field(default_factory=AnalyzeSettings)

    def with_seed(self, seed: int | None) -> "RunConfig":
        return self if seed is None else dataclasses.replace(self, phantom=self.phantom.with_seed(seed))

    def noiseless(self) -> "RunConfig":
        return dataclasses.replace(self, phantom=self.phantom.noiseless())

    def controller_for(self, mode: Mode | str) -> ControllerConfig:
        return self.controller.resolve(mode, self.phantom, self.band)


_SECTIONS = {
    "phantom": PhantomConfig,
    "band": BandpassSpec,
    "controller": ControllerSection,
    "sweep": SweepSettings,
    "restoration": RestorationSettings,
    "analyze": AnalyzeSettings,
}

_CONTROLLER_MODE_KEYS = {"k_p", "direction_step", "step_clamp", "energy_threshold"}


def _coerce(cls, name: str, value):
    if isinstance(value, list):
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigurationError(f"{cls.__name__}.{name}: list entries must be numbers")
        return tuple(value)
    if isinstance(value, dict):
        raise ConfigurationError(f"{cls.__name__}.{name}: unexpected table")
    return value


def _build(cls, section: str, table: dict[str, Any]):
    allowed = {f.name for f in fields(cls)} - {"per_mode"}
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    kwargs = {k: _coerce(cls, k, v) for k, v in table.items()}
    try:
        return cls(**kwargs)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"[{section}]: {exc}") from exc


def parse_config(data: dict[str, Any]) -> RunConfig:
    """Build a ``RunConfig`` from an already-parsed TOML document."""
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigurationError(f"unknown section(s): {', '.join(unknown)}")
    built = {}
    for name, cls in _SECTIONS.items():
        table = data.get(name, {})
        if not isinstance(table, dict):
            raise ConfigurationError(f"[{name}] must be a table")
        if name == "controller":
            table = dict(table)
            per_mode = {}
            for mode_name in _MODE_TABLES:
                sub = table.pop(mode_name, None)
                if sub is None:
                    continue
                if not isinstance(sub, dict):
                    raise ConfigurationError(f"[controller.{mode_name}] must be a table")
                bad = sorted(set(sub) - _CONTROLLER_MODE_KEYS)
                if bad:
                    raise ConfigurationError(f"unknown key(s) in [controller.{mode_name}]: {', '.join(bad)}")
                per_mode[mode_name] = {k: _coerce(ControllerSection, k, v) for k, v in sub.items()}
            section = _build(cls, name, table)
            built[name] = dataclasses.replace(section, per_mode=per_mode)
        else:
            built[name] = _build(cls, name, table)
    return RunConfig(**built)


def load_config(path: str | os.PathLike | None) -> RunConfig:
    """Read a TOML run configuration; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigurationError(f"{path}: not UTF-8 text") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return parse_config(data)


def _plain(value):
    if isinstance(value, Mode):
        return value.value
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items() if v is not None}
    return value


def _table(obj, skip=()) -> dict[str, Any]:
    return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj) if f.name not in skip and getattr(obj, f.name) is not None}


def config_to_dict(cfg: RunConfig, resolved: dict[Mode, ControllerConfig] | None = None) -> dict[str, Any]:
    """Plain-dict form of ``cfg``.

    When ``resolved`` controller configs are given, their effective values
    (including an estimated ``k_p``) are written into the per-mode tables so
    the echoed file reproduces the run without re-deriving anything.
    """
    out = {
        "phantom": _table(cfg.phantom),
        "band": _table(cfg.band),
        "controller": _table(cfg.controller, skip=("per_mode",)),
        "sweep": _table(cfg.sweep),
        "restoration": _table(cfg.restoration),
        "analyze": _table(cfg.analyze),
    }
    per_mode = {k: dict(_plain(v)) for k, v in cfg.controller.per_mode.items()}
    for mode, ctrl in (resolved or {}).items():
        per_mode.setdefault(mode.value, {}).update(
            {
                "k_p": ctrl.k_p,
                "direction_step": ctrl.direction_step,
                "step_clamp": list(ctrl.step_clamp),
            }
        )
    for name in _MODE_TABLES:
        if per_mode.get(name):
            out["controller"][name] = per_mode[name]
    return out


def dump_config(cfg: RunConfig, path: str | os.PathLike, resolved: dict[Mode, ControllerConfig] | None = None) -> None:
    with open(path, "wb") as fh:
        tomli_w.dump(config_to_dict(cfg, resolved), fh)
