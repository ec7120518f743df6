"""Run configuration: JSON in, validated dataclasses out.

Keys carry their units explicitly (w_cs_um, beta_rbcs_cm3_per_s) and unknown
keys are rejected so a typo cannot silently fall back to a default. Lengths
are given in micrometers at the boundary and converted to centimeters for
the physics layer.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .gillespie import ExperimentSchedule
from .photon import DetectionCalibration
from .physics import PhysicalParams

__all__ = ["ConfigError", "GridSpec", "RunConfig", "load_config"]

_UM_TO_CM = 1e-4


class ConfigError(ValueError):
    pass


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


@dataclass(frozen=True)
class GridSpec:
    """Companion-number grid: min, min+step, ... up to and including max."""

    min: int = 0
    max: int = 3300
    step: int = 220

    def __post_init__(self) -> None:
        if self.min < 0 or self.max < self.min or self.step <= 0:
            raise ConfigError(f"invalid grid spec {self!r}")

    def values(self) -> np.ndarray:
        return np.arange(self.min, self.max + 1, self.step)


@dataclass
class RunConfig:
    physics: dict = field(default_factory=dict)
    calibration: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    grid: GridSpec = field(default_factory=GridSpec)
    traces_per_bin: int = 200
    master_seed: int = 1234
    out_dir: str = "runs/default"

    _PHYSICS_KEYS = {
        "r0_per_s", "alpha_per_s_per_rb", "gamma_per_s",
        "beta_rbcs_cm3_per_s", "beta_cscs_cm3_per_s", "w_cs_um", "w_rb_um",
    }
    _CAL_KEYS = {"rate_per_atom_per_s", "background_rate_per_s", "dark_rate_per_s", "bin_s"}
    _SCHED_KEYS = {"detect_s", "off_s", "background_s"}
    _TOP_KEYS = {"physics", "calibration", "schedule", "grid", "traces_per_bin", "master_seed", "out_dir"}

    @classmethod
    def default(cls) -> "RunConfig":
        return cls.from_dict({})

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        _check_keys(raw, cls._TOP_KEYS, "config")
        physics = {**_DEFAULT_PHYSICS, **raw.get("physics", {})}
        _check_keys(raw.get("physics", {}), cls._PHYSICS_KEYS, "physics")
        calibration = {**_DEFAULT_CAL, **raw.get("calibration", {})}
        _check_keys(raw.get("calibration", {}), cls._CAL_KEYS, "calibration")
        schedule = {**_DEFAULT_SCHED, **raw.get("schedule", {})}
        _check_keys(raw.get("schedule", {}), cls._SCHED_KEYS, "schedule")
        grid_raw = raw.get("grid", {})
        _check_keys(grid_raw, {"min", "max", "step"}, "grid")
        grid = GridSpec(**{**_DEFAULT_GRID, **grid_raw})
        traces = int(raw.get("traces_per_bin", 200))
        if traces < 1:
            raise ConfigError(f"traces_per_bin must be >= 1, got {traces}")
        seed = int(raw.get("master_seed", 1234))
        if seed < 0:
            raise ConfigError(f"master_seed must be non-negative, got {seed}")
        cfg = cls(
            physics=physics,
            calibration=calibration,
            schedule=schedule,
            grid=grid,
            traces_per_bin=traces,
            master_seed=seed,
            out_dir=str(raw.get("out_dir", "runs/default")),
        )
        # Fail fast on physically invalid values by building the typed objects.
        cfg.physical_params()
        cfg.detection_calibration()
        cfg.experiment_schedule()
        return cfg

    def to_dict(self) -> dict:
        return {
            "physics": dict(self.physics),
            "calibration": dict(self.calibration),
            "schedule": dict(self.schedule),
            "grid": asdict(self.grid),
            "traces_per_bin": self.traces_per_bin,
            "master_seed": self.master_seed,
            "out_dir": self.out_dir,
        }

    def physical_params(self) -> PhysicalParams:
        p = self.physics
        try:
            return PhysicalParams(
                r0=float(p["r0_per_s"]),
                alpha=float(p["alpha_per_s_per_rb"]),
                gamma=float(p["gamma_per_s"]),
                beta_rbcs=float(p["beta_rbcs_cm3_per_s"]),
                beta_cscs=float(p["beta_cscs_cm3_per_s"]),
                w_cs=float(p["w_cs_um"]) * _UM_TO_CM,
                w_rb=float(p["w_rb_um"]) * _UM_TO_CM,
            )
        except ValueError as exc:
            raise ConfigError(f"invalid physics section: {exc}") from exc

    def detection_calibration(self) -> DetectionCalibration:
        c = self.calibration
        try:
            return DetectionCalibration(
                rate_per_atom=float(c["rate_per_atom_per_s"]),
                background_rate=float(c["background_rate_per_s"]),
                dark_rate=float(c["dark_rate_per_s"]),
                bin_s=float(c["bin_s"]),
            )
        except ValueError as exc:
            raise ConfigError(f"invalid calibration section: {exc}") from exc

    def experiment_schedule(self) -> ExperimentSchedule:
        s = self.schedule
        try:
            return ExperimentSchedule(
                detect_s=float(s["detect_s"]),
                off_s=float(s["off_s"]),
                background_s=float(s["background_s"]),
            )
        except ValueError as exc:
            raise ConfigError(f"invalid schedule section: {exc}") from exc


_DEFAULT_PHYSICS = {
    "r0_per_s": 1.48,
    "alpha_per_s_per_rb": 2.3e-4,
    "gamma_per_s": 0.03,
    "beta_rbcs_cm3_per_s": 1.6e-10,
    "beta_cscs_cm3_per_s": 0.0,
    "w_cs_um": 6.6,
    "w_rb_um": 26.4,
}
_DEFAULT_CAL = {
    "rate_per_atom_per_s": 1.0e4,
    "background_rate_per_s": 5.0e3,
    "dark_rate_per_s": 0.0,
    "bin_s": 0.02,
}
_DEFAULT_SCHED = {"detect_s": 3.0, "off_s": 0.5, "background_s": 0.2}
_DEFAULT_GRID = {"min": 0, "max": 3300, "step": 220}


def load_config(path: "str | Path | None") -> RunConfig:
    """Read a JSON config file; None gives the built-in defaults."""
    if path is None:
        return RunConfig.default()
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return RunConfig.from_dict(raw)
