"""Synthetic digitized homodyne traces.

Units: one vacuum quadrature has unit per-sample variance in a trace, so a
trace variance of ``v`` corresponds to ``v / 2`` in the absolute units of
:mod:`cvcluster.gaussian`.

The chain per trace is: two-mode squeezed noise built per FFT frequency,
time-domain phase modulation ``(X, P) -> (cos a X + sin a P,
-sin a X + cos a P)`` with ``a(t) = sum_j m_j cos(Omega_j t + phi_j)``,
quadrature selection, conjugate group delay, drive pickup, electronic
noise and quantization.  At zero phase the modulation couples bins
exactly as the analytic EOM matrices do.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .gaussian import DriveSpec, ModeLayout, SqueezeProfile

QUAD_CONFIGS = {"XX": ("X", "X"), "PP": ("P", "P"), "XP": ("X", "P")}
ROLES = ("signal", "shot", "elec")
MAGIC = b"CVLT"
VERSION = 1


@dataclass(frozen=True)
class SynthConfig:
    """Everything needed to generate one probe/conjugate trace pair.

    ``profile`` of ``None`` selects the smooth default source profile.
    ``fullscale`` of ``None`` sets the digitizer range to five times the
    rms of each detector's signal.  ``digitizer_bits`` of ``None`` skips
    quantization.  ``pickup_db`` adds drive-tone pickup to both detectors
    at that power relative to the shot-noise power inside one bin.
    ``lock_jitter_rad`` is the rms of white phase noise on the conjugate
    quadrature selection.
    """

    layout: ModeLayout
    profile: SqueezeProfile | None = None
    drive: DriveSpec = field(default_factory=DriveSpec)
    quad_config: str = "XX"
    delay_s: float = 10.4e-9
    elec_noise_db: float | None = -6.0
    elec_tilt_db_per_mhz: float = 0.0
    sample_dt_s: float = 1e-8
    samples: int = 1_000_000
    digitizer_bits: int | None = 8
    fullscale: float | None = None
    seed: int = 0
    pickup_db: float | None = None
    lock_jitter_rad: float = 0.0

    def __post_init__(self) -> None:
        if self.quad_config not in QUAD_CONFIGS:
            raise ValueError(f"quad_config must be one of {tuple(QUAD_CONFIGS)}")
        if self.samples < 16 or self.sample_dt_s <= 0:
            raise ValueError("need at least 16 samples and a positive sample interval")
        if self.digitizer_bits is not None and not 2 <= self.digitizer_bits <= 16:
            raise ValueError("digitizer_bits must be in [2, 16]")
        if self.fullscale is not None and self.fullscale <= 0:
            raise ValueError("fullscale must be positive")
        nyquist = 0.5 / self.sample_dt_s
        if self.layout.top_edge >= nyquist:
            raise ValueError(f"top bin edge {self.layout.top_edge} Hz is above Nyquist {nyquist} Hz")
        window = self.samples * self.sample_dt_s
        for tone in self.drive.tones:
            cycles = tone.frequency * window
            if abs(cycles - round(cycles)) > 1e-6:
                raise ValueError(
                    f"{self.samples} samples do not hold a whole number of periods of the {tone.frequency} Hz tone"
                )
        if self.profile is not None and self.profile.r_of_bin.size != self.layout.n_bins:
            raise ValueError("profile length does not match layout")

    @property
    def squeeze_profile(self) -> SqueezeProfile:
        return self.profile if self.profile is not None else SqueezeProfile.smooth(self.layout)

    def to_dict(self) -> dict:
        return {
            "layout": self.layout.to_dict(),
            "profile_r": None if self.profile is None else [float(x) for x in self.profile.r_of_bin],
            "drive": self.drive.to_dict(),
            "quad_config": self.quad_config,
            "delay_s": self.delay_s,
            "elec_noise_db": self.elec_noise_db,
            "elec_tilt_db_per_mhz": self.elec_tilt_db_per_mhz,
            "sample_dt_s": self.sample_dt_s,
            "samples": int(self.samples),
            "digitizer_bits": self.digitizer_bits,
            "fullscale": self.fullscale,
            "seed": int(self.seed),
            "pickup_db": self.pickup_db,
            "lock_jitter_rad": self.lock_jitter_rad,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        layout = ModeLayout.from_dict(d["layout"])
        prof = d.get("profile_r")
        return cls(
            layout=layout,
            profile=None if prof is None else SqueezeProfile(np.asarray(prof, dtype=float)),
            drive=DriveSpec.from_dict(d.get("drive", {})),
            quad_config=d.get("quad_config", "XX"),
            delay_s=float(d.get("delay_s", 10.4e-9)),
            elec_noise_db=d.get("elec_noise_db", -6.0),
            elec_tilt_db_per_mhz=float(d.get("elec_tilt_db_per_mhz", 0.0)),
            sample_dt_s=float(d.get("sample_dt_s", 1e-8)),
            samples=int(d.get("samples", 1_000_000)),
            digitizer_bits=d.get("digitizer_bits", 8),
            fullscale=d.get("fullscale"),
            seed=int(d.get("seed", 0)),
            pickup_db=d.get("pickup_db"),
            lock_jitter_rad=float(d.get("lock_jitter_rad", 0.0)),
        )


@dataclass
class TraceSet:
    """A probe/conjugate trace pair with its provenance."""

    probe: np.ndarray
    conjugate: np.ndarray
    metadata: dict
    codes: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.probe.shape != self.conjugate.shape or self.probe.ndim != 1:
            raise ValueError("probe and conjugate traces must be 1-D and of equal length")

    @property
    def dt(self) -> float:
        return float(self.metadata["dt"])

    @property
    def config(self) -> SynthConfig:
        return SynthConfig.from_dict(self.metadata["config"])

    @property
    def role(self) -> str:
        return self.metadata.get("role", "signal")

    @property
    def labels(self) -> tuple[str, str]:
        return tuple(self.metadata["labels"])  # type: ignore[return-value]


def quantize(trace: np.ndarray, bits: int, fullscale: float) -> tuple[np.ndarray, float]:
    """Uniform mid-tread quantizer with clipping at ``+-fullscale``.

    Returns the quantized trace (in input units) and the fraction of
    samples that were clipped.
    """
    codes, step, clip = _quantize_codes(trace, bits, fullscale)
    return codes.astype(float) * step, clip


def _quantize_codes(trace: np.ndarray, bits: int, fullscale: float) -> tuple[np.ndarray, float, float]:
    if not 2 <= bits <= 16:
        raise ValueError("bits must be in [2, 16]")
    if fullscale <= 0:
        raise ValueError("fullscale must be positive")
    x = np.asarray(trace, dtype=float)
    half = 2 ** (bits - 1)
    step = fullscale / half
    clip = float(np.mean(np.abs(x) > fullscale)) if x.size else 0.0
    codes = np.clip(np.rint(x / step), -half, half - 1)
    dtype = np.int8 if bits <= 8 else np.int16
    return codes.astype(dtype), step, clip


def _rng_normals(rng: np.random.Generator, rows: int, n: int) -> np.ndarray:
    return rng.standard_normal((rows, n))


def drive_phase(t: np.ndarray, drive: DriveSpec, scale: float = 1.0) -> np.ndarray:
    """Modulation angle ``scale * sum_j m_j cos(Omega_j t + phi_j)``."""
    a = np.zeros_like(t)
    for tone in drive.tones:
        a += scale * tone.mod_index * np.cos(2 * np.pi * tone.frequency * t + tone.phase)
    return a


def _rotate(x: np.ndarray, p: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c, s = np.cos(a), np.sin(a)
    return c * x + s * p, -s * x + c * p


def _delay(trace: np.ndarray, dt: float, delay: float) -> np.ndarray:
    """Circular delay by ``delay`` seconds through a spectral phase ramp."""
    if delay == 0.0:
        return trace
    n = trace.size
    spec = np.fft.rfft(trace)
    spec *= np.exp(-2j * np.pi * np.fft.rfftfreq(n, dt) * delay)
    return np.fft.irfft(spec, n)


def _elec_noise(rng: np.random.Generator, config: SynthConfig, n: int) -> np.ndarray:
    if config.elec_noise_db is None:
        return np.zeros((2, n))
    e = rng.standard_normal((2, n)) * math.sqrt(10.0 ** (config.elec_noise_db / 10.0))
    if config.elec_tilt_db_per_mhz:
        f = np.fft.rfftfreq(n, config.sample_dt_s)
        gain = 10.0 ** (config.elec_tilt_db_per_mhz * (f / 1e6) / 20.0)
        gain /= math.sqrt(np.mean(gain**2))
        e = np.fft.irfft(np.fft.rfft(e, axis=1) * gain, n, axis=1)
    return e


def _pickup(rng: np.random.Generator, config: SynthConfig, t: np.ndarray) -> np.ndarray:
    out = np.zeros((2, t.size))
    if config.pickup_db is None:
        return out
    # Shot-noise power inside one bin is 2 * bin_width * dt of the unit sample variance.
    bin_power = 2.0 * config.layout.bin_width * config.sample_dt_s
    amp = math.sqrt(2.0 * bin_power * 10.0 ** (config.pickup_db / 10.0))
    for tone in config.drive.tones:
        if tone.mod_index == 0:
            continue
        phases = rng.uniform(0, 2 * np.pi, size=2)
        for d in range(2):
            out[d] += amp * np.cos(2 * np.pi * tone.frequency * t + phases[d])
    return out


def _digitize(
    probe: np.ndarray, conj: np.ndarray, config: SynthConfig
) -> tuple[list[np.ndarray], list[np.ndarray | None], dict]:
    info: dict = {"bits": config.digitizer_bits, "fullscale": [], "step": [], "clip_fraction": []}
    values, codes = [], []
    for x in (probe, conj):
        if config.digitizer_bits is None:
            values.append(x)
            codes.append(None)
            info["fullscale"].append(None)
            info["step"].append(None)
            info["clip_fraction"].append(0.0)
            continue
        fs = config.fullscale if config.fullscale is not None else 5.0 * float(np.sqrt(np.mean(x * x)))
        c, step, clip = _quantize_codes(x, config.digitizer_bits, fs)
        values.append(c.astype(float) * step)
        codes.append(c)
        info["fullscale"].append(fs)
        info["step"].append(step)
        info["clip_fraction"].append(clip)
    return values, codes, info


def _finish(
    probe: np.ndarray,
    conj: np.ndarray,
    config: SynthConfig,
    role: str,
    labels: tuple[str, str],
    rng: np.random.Generator,
    t: np.ndarray,
) -> TraceSet:
    if role == "signal":
        pk = _pickup(rng, config, t)
        probe = probe + pk[0]
        conj = conj + pk[1]
    if role != "elec":
        conj = _delay(conj, config.sample_dt_s, config.delay_s)
    e = _elec_noise(rng, config, t.size)
    probe = probe + e[0]
    conj = conj + e[1]
    (vp, vc), codes, info = _digitize(probe, conj, config)
    meta = {
        "dt": config.sample_dt_s,
        "n": int(t.size),
        "labels": list(labels),
        "role": role,
        "seed": int(config.seed),
        "config": config.to_dict(),
        "digitizer": info,
    }
    return TraceSet(vp, vc, meta, tuple(codes))


def synth_traces(config: SynthConfig) -> TraceSet:
    """Generate one signal trace pair for ``config.quad_config``."""
    n, dt = config.samples, config.sample_dt_s
    rng = np.random.default_rng(config.seed)
    g = _rng_normals(rng, 4, n)
    r = config.squeeze_profile.r_at(np.fft.rfftfreq(n, dt), config.layout)
    if np.any(r > 0):
        spec = np.fft.rfft(g, axis=1)
        c, s = np.cosh(2 * r), np.sinh(2 * r)
        mixed = np.stack(
            [c * spec[0] + s * spec[1], s * spec[0] + c * spec[1], c * spec[2] - s * spec[3], -s * spec[2] + c * spec[3]]
        )
        xp, xc, pp, pc = np.fft.irfft(mixed, n, axis=1)
    else:
        xp, xc, pp, pc = g
    t = np.arange(n) * dt
    drive = config.drive
    if drive.tones:
        beam = drive.target_beam
        scale = 0.5 if beam == "both-halved" else 1.0
        a = drive_phase(t, drive, scale)
        if beam in ("conjugate", "both-halved"):
            xc, pc = _rotate(xc, pc, a)
        if beam in ("probe", "both-halved"):
            xp, pp = _rotate(xp, pp, a)
    qp, qc = QUAD_CONFIGS[config.quad_config]
    probe = xp if qp == "X" else pp
    conj, conj_other = (xc, pc) if qc == "X" else (pc, -xc)
    if config.lock_jitter_rad:
        d = rng.standard_normal(n) * config.lock_jitter_rad
        conj = np.cos(d) * conj + np.sin(d) * conj_other
    return _finish(probe, conj, config, "signal", (qp + "p", qc + "c"), rng, t)


def shot_traces(config: SynthConfig) -> TraceSet:
    """Vacuum inputs (blocked signal ports) with the same detection chain."""
    n = config.samples
    rng = np.random.default_rng(config.seed)
    g = _rng_normals(rng, 2, n)
    t = np.arange(n) * config.sample_dt_s
    qp, qc = QUAD_CONFIGS[config.quad_config]
    return _finish(g[0], g[1], config, "shot", (qp + "p", qc + "c"), rng, t)


def elec_traces(config: SynthConfig) -> TraceSet:
    """Detector electronic noise alone (light blocked)."""
    n = config.samples
    rng = np.random.default_rng(config.seed)
    t = np.arange(n) * config.sample_dt_s
    z = np.zeros(n)
    return _finish(z, z, config, "elec", ("-", "-"), rng, t)


def whole_period_samples(dt: float, freqs: list[float]) -> int:
    """Smallest sample count holding a whole number of periods of every tone."""
    unit = 1
    for f in freqs:
        period = Fraction(1.0 / (f * dt)).limit_denominator(10**6)
        unit = math.lcm(unit, period.numerator)
    return unit


def with_seed(config: SynthConfig, seed: int, **changes) -> SynthConfig:
    return replace(config, seed=int(seed), **changes)


def save_traces(ts: TraceSet, path: str | Path) -> None:
    """Write a CVLT file: magic, version, JSON header, then probe and conjugate samples."""
    codes = ts.codes or (None, None)
    if codes[0] is not None and codes[1] is not None:
        fmt = "int8" if codes[0].dtype == np.int8 else "int16"
        payload = [np.asarray(c).astype("<i1" if fmt == "int8" else "<i2") for c in codes]
    else:
        fmt = "float64"
        payload = [np.asarray(x, dtype="<f8") for x in (ts.probe, ts.conjugate)]
    header = dict(ts.metadata)
    header["sample_format"] = fmt
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(blob)))
        fh.write(blob)
        for p in payload:
            fh.write(p.tobytes())


def load_traces(path: str | Path) -> TraceSet:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a CVLT trace file")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = 10
    header = json.loads(data[off : off + hlen])
    off += hlen
    n = int(header["n"])
    fmt = header.pop("sample_format")
    dtype = {"int8": "<i1", "int16": "<i2", "float64": "<f8"}[fmt]
    size = np.dtype(dtype).itemsize * n
    if len(data) != off + 2 * size:
        raise ValueError(f"{path}: truncated sample payload")
    raw = [np.frombuffer(data, dtype=dtype, count=n, offset=off + i * size) for i in range(2)]
    if fmt == "float64":
        values = [r.astype(float) for r in raw]
        codes = [None, None]
    else:
        steps = header["digitizer"]["step"]
        values = [r.astype(float) * steps[i] for i, r in enumerate(raw)]
        codes = [r.astype(np.int8 if fmt == "int8" else np.int16) for r in raw]
    return TraceSet(values[0], values[1], header, tuple(codes))


def export_csv(ts: TraceSet, path: str | Path, limit: int | None = None) -> None:
    """Plain-text dump of the samples for inspection."""
    n = ts.probe.size if limit is None else min(limit, ts.probe.size)
    t = np.arange(n) * ts.dt
    np.savetxt(
        path,
        np.column_stack([t, ts.probe[:n], ts.conjugate[:n]]),
        delimiter=",",
        header="t_s,probe,conjugate",
        comments="",
        fmt="%.10g",
    )
