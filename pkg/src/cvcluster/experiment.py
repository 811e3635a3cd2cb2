"""Experiment configuration, JSON schema and named presets."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .gaussian import DriveSpec, DriveTone, ModeLayout, SqueezeProfile, modulation_index
from .synth import SynthConfig

CONFIG_VERSION = 1

# Modulation index of a 30 V drive on a 260 V half-wave modulator.
DEFAULT_MOD_INDEX = modulation_index(30.0, 260.0)

_NUM = {"type": "number"}
SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["version", "layout", "profile", "drive"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "name": {"type": "string"},
        "layout": {
            "type": "object",
            "required": ["mode_count", "spacing", "bin_width", "start_center"],
            "additionalProperties": False,
            "properties": {
                "mode_count": {"type": "integer", "minimum": 1},
                "spacing": {"type": "number", "exclusiveMinimum": 0},
                "bin_width": {"type": "number", "exclusiveMinimum": 0},
                "start_center": {"type": "number", "exclusiveMinimum": 0},
                "guard_modes": {"type": "integer", "minimum": 0},
            },
        },
        "profile": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["flat", "smooth", "bins", "r"]},
                "db": _NUM,
                "r": {"oneOf": [_NUM, {"type": "array", "items": _NUM}]},
                "peak_db": _NUM,
                "bandwidth_hz": _NUM,
                "low_cut_hz": {"type": ["number", "null"]},
            },
        },
        "drive": {
            "type": "object",
            "required": ["tones"],
            "additionalProperties": False,
            "properties": {
                "tones": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["frequency", "mod_index"],
                        "additionalProperties": False,
                        "properties": {
                            "frequency": {"type": "number", "exclusiveMinimum": 0},
                            "mod_index": {"type": "number", "minimum": 0},
                            "phase": _NUM,
                        },
                    },
                },
                "target_beam": {"enum": ["probe", "conjugate", "both-halved"]},
            },
        },
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delay_s": _NUM,
                "elec_noise_db": {"type": ["number", "null"]},
                "elec_tilt_db_per_mhz": _NUM,
                "sample_dt_s": {"type": "number", "exclusiveMinimum": 0},
                "samples": {"type": "integer", "minimum": 16},
                "digitizer_bits": {"type": ["integer", "null"], "minimum": 2, "maximum": 16},
                "fullscale": {"type": ["number", "null"]},
                "pickup_db": {"type": ["number", "null"]},
                "lock_jitter_rad": {"type": "number", "minimum": 0},
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delay": {"oneOf": [{"const": "auto"}, _NUM]},
                "delay_search_s": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                "normalization": {"enum": ["auto", "shot-ratio", "elec-subtract"]},
                "method": {"enum": ["matrix", "lockin", "both"]},
                "threshold": {"type": "number", "minimum": 0},
                "max_extraneous_fraction": {"type": "number", "minimum": 0},
                "eom_model": {"enum": ["exact", "truncated"]},
            },
        },
        "runs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "signal": {"type": "integer", "minimum": 0},
                "eom_off": {"type": "integer", "minimum": 0},
                "shot": {"type": "integer", "minimum": 0},
                "elec": {"type": "integer", "minimum": 0},
                "eom_off_quads": {"type": "array", "items": {"enum": ["XX", "PP", "XP"]}},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
}

DEFAULT_SYNTH = {
    "delay_s": 10.4e-9,
    "elec_noise_db": -6.0,
    "elec_tilt_db_per_mhz": 0.0,
    "sample_dt_s": 1e-8,
    "samples": 1_000_000,
    "digitizer_bits": 8,
    "fullscale": None,
    "pickup_db": None,
    "lock_jitter_rad": 0.0,
}
DEFAULT_ANALYSIS = {
    "delay": "auto",
    "delay_search_s": [-50e-9, 50e-9],
    "normalization": "auto",
    "method": "both",
    "threshold": 0.05,
    "max_extraneous_fraction": 0.05,
    "eom_model": "exact",
}
DEFAULT_RUNS = {"signal": 12, "eom_off": 12, "shot": 12, "elec": 4, "eom_off_quads": ["XX", "PP", "XP"]}


class ConfigError(ValueError):
    """Configuration failed validation."""


@dataclass
class ExperimentConfig:
    layout: ModeLayout
    profile_spec: dict
    drive: DriveSpec
    synth: dict = field(default_factory=lambda: dict(DEFAULT_SYNTH))
    analysis: dict = field(default_factory=lambda: dict(DEFAULT_ANALYSIS))
    runs: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_RUNS))
    seed: int = 0
    name: str = "custom"
    output_dir: str = "out"

    def profile(self) -> SqueezeProfile:
        return build_profile(self.profile_spec, self.layout)

    def analysis_drive(self) -> DriveSpec:
        """The drive with tone phases removed, as used by the analytic engine."""
        return DriveSpec(
            tuple(DriveTone(t.frequency, t.mod_index, 0.0) for t in self.drive.tones), self.drive.target_beam
        )

    def synth_config(self, quad: str, seed: int, eom_on: bool = True) -> SynthConfig:
        drive = self.drive if eom_on else DriveSpec((), self.drive.target_beam)
        return SynthConfig(
            layout=self.layout,
            profile=self.profile(),
            drive=drive,
            quad_config=quad,
            seed=int(seed),
            **self.synth,
        )

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "name": self.name,
            "layout": self.layout.to_dict(),
            "profile": copy.deepcopy(self.profile_spec),
            "drive": self.drive.to_dict(),
            "synth": dict(self.synth),
            "analysis": copy.deepcopy(self.analysis),
            "runs": copy.deepcopy(self.runs),
            "seed": int(self.seed),
            "output_dir": self.output_dir,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(d, SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {path}: {exc.message}") from None
        try:
            layout = ModeLayout.from_dict(d["layout"])
            drive = DriveSpec.from_dict(d["drive"])
            for t in drive.tones:
                layout.offset_of(t.frequency)
            synth = {**DEFAULT_SYNTH, **d.get("synth", {})}
            analysis = {**DEFAULT_ANALYSIS, **d.get("analysis", {})}
            runs = {**copy.deepcopy(DEFAULT_RUNS), **d.get("runs", {})}
            cfg = cls(
                layout=layout,
                profile_spec=copy.deepcopy(d["profile"]),
                drive=drive,
                synth=synth,
                analysis=analysis,
                runs=runs,
                seed=int(d.get("seed", 0)),
                name=d.get("name", "custom"),
                output_dir=d.get("output_dir", "out"),
            )
            cfg.profile()
            cfg.synth_config("XX", 0)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)


def build_profile(spec: dict, layout: ModeLayout) -> SqueezeProfile:
    kind = spec.get("kind")
    if kind == "flat":
        return SqueezeProfile.flat(layout, float(spec.get("db", -3.0)))
    if kind == "smooth":
        return SqueezeProfile.smooth(
            layout,
            float(spec.get("peak_db", -3.0)),
            float(spec.get("bandwidth_hz", 20e6)),
            spec.get("low_cut_hz"),
        )
    if kind in ("bins", "r"):
        r = spec["r"]
        if np.isscalar(r):
            return SqueezeProfile(np.full(layout.n_bins, float(r)))
        prof = SqueezeProfile(np.asarray(r, dtype=float))
        if prof.r_of_bin.size != layout.n_bins:
            raise ValueError("profile length does not match layout")
        return prof
    raise ValueError(f"unknown profile kind {kind!r}")


def _tones(freqs: list[float], m: float) -> DriveSpec:
    return DriveSpec(tuple(DriveTone(f, m) for f in freqs), "conjugate")


def _preset_fig2() -> ExperimentConfig:
    return ExperimentConfig(
        layout=ModeLayout(100, 200e3, 180e3, 100e3, 0),
        profile_spec={"kind": "smooth", "peak_db": -3.0, "bandwidth_hz": 20e6, "low_cut_hz": None},
        drive=_tones([200e3], DEFAULT_MOD_INDEX),
        runs={"signal": 12, "eom_off": 12, "shot": 12, "elec": 4, "eom_off_quads": ["XX", "PP", "XP"]},
        seed=2,
        name="fig2-1d",
    )


def _preset_figs1() -> ExperimentConfig:
    return ExperimentConfig(
        layout=ModeLayout(200, 100e3, 90e3, 50e3, 0),
        profile_spec={"kind": "smooth", "peak_db": -3.0, "bandwidth_hz": 20e6, "low_cut_hz": None},
        drive=_tones([100e3, 500e3], DEFAULT_MOD_INDEX),
        runs={"signal": 12, "eom_off": 12, "shot": 12, "elec": 4, "eom_off_quads": ["XX", "PP", "XP"]},
        seed=21,
        name="figS1-2d",
    )


def _preset_fig3() -> ExperimentConfig:
    # Bins start at 100 kHz so the drive tones sit at the centers of modes 1, 3 and 9.
    return ExperimentConfig(
        layout=ModeLayout(200, 100e3, 90e3, 100e3, 0),
        profile_spec={"kind": "flat", "db": -3.0},
        drive=_tones([100e3, 300e3, 900e3], DEFAULT_MOD_INDEX),
        synth={**DEFAULT_SYNTH, "pickup_db": 5.0},
        runs={"signal": 24, "eom_off": 24, "shot": 24, "elec": 8, "eom_off_quads": ["XX", "PP"]},
        seed=3,
        name="fig3-3d",
    )


def _preset_figs4() -> ExperimentConfig:
    return ExperimentConfig(
        layout=ModeLayout(200, 33e3, 30e3, 33e3, 0),
        profile_spec={"kind": "flat", "db": -4.0},
        drive=_tones([33e3, 99e3, 297e3, 891e3], DEFAULT_MOD_INDEX),
        runs={"signal": 12, "eom_off": 12, "shot": 12, "elec": 4, "eom_off_quads": ["XX", "PP"]},
        seed=4,
        name="figS4-4d",
    )


def _preset_demo() -> ExperimentConfig:
    return ExperimentConfig(
        layout=ModeLayout(24, 100e3, 90e3, 100e3, 0),
        profile_spec={"kind": "flat", "db": -3.0},
        drive=_tones([100e3, 300e3], DEFAULT_MOD_INDEX),
        synth={**DEFAULT_SYNTH, "samples": 200_000},
        runs={"signal": 2, "eom_off": 2, "shot": 2, "elec": 2, "eom_off_quads": ["XX", "PP", "XP"]},
        seed=7,
        name="demo",
    )


PRESETS = {
    "fig2-1d": _preset_fig2,
    "figS1-2d": _preset_figs1,
    "fig3-3d": _preset_fig3,
    "figS4-4d": _preset_figs4,
    "demo": _preset_demo,
}


def preset(name: str) -> ExperimentConfig:
    try:
        cfg = PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    # Round-trip through the schema so presets obey the same rules as files.
    return ExperimentConfig.from_dict(cfg.to_dict())


def operating_point_r(edge_weight: float = 0.09, m: float = DEFAULT_MOD_INDEX, tones: int = 4) -> float:
    """Squeezing parameter at which the shot-normalized XP edge weight equals ``edge_weight``.

    On the analytic chain a lattice edge carries ``sinh(4r) J1(m) J0(m)^(tones-1)``.
    """
    from .gaussian import bessel_j

    s = edge_weight / (bessel_j(1, m) * bessel_j(0, m) ** (tones - 1))
    return math.asinh(s) / 4.0
