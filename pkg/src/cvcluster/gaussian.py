"""Gaussian-state engine for frequency-comb two-mode squeezed light.

Every covariance and symplectic matrix in this package uses quadrature
block ordering ``(Xp, Xc, Pp, Pc)``: all probe amplitude quadratures in
ascending bin order, then the conjugate amplitude quadratures, then the
two phase-quadrature blocks.  With ``n = M + 2G`` bins the dimension is
``4n`` and the vacuum covariance is ``I / 2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

ORDERING = ("Xp", "Xc", "Pp", "Pc")
BEAMS = ("probe", "conjugate", "both-halved")
EOM_MODELS = ("exact", "truncated")

# Above this index the first-sideband picture stops being a good cluster model.
MOD_INDEX_WARN = 0.5


@dataclass(frozen=True)
class ModeLayout:
    """Frequency-bin geometry shared by every module.

    Parameters
    ----------
    mode_count : int
        Number of reported (interior) modes ``M``.
    spacing : float
        Bin-center spacing in Hz.
    bin_width : float
        Width of each bin's spectral mask in Hz.
    start_center : float
        Center frequency of the first bin, guards included, in Hz.
    guard_modes : int
        Extra bins on each spectral edge that are simulated but not reported.
    """

    mode_count: int
    spacing: float
    bin_width: float
    start_center: float
    guard_modes: int = 0

    def __post_init__(self) -> None:
        if int(self.mode_count) != self.mode_count or self.mode_count < 1:
            raise ValueError(f"mode_count must be a positive integer, got {self.mode_count}")
        if int(self.guard_modes) != self.guard_modes or self.guard_modes < 0:
            raise ValueError(f"guard_modes must be a non-negative integer, got {self.guard_modes}")
        if not (self.spacing > 0 and self.bin_width > 0):
            raise ValueError("spacing and bin_width must be positive")
        if self.bin_width >= self.spacing:
            raise ValueError(
                f"bin_width ({self.bin_width}) must be smaller than spacing ({self.spacing})"
            )
        if self.start_center < self.bin_width / 2:
            raise ValueError("start_center must be at least bin_width/2 (no negative-frequency overlap)")

    @property
    def n_bins(self) -> int:
        """Total number of simulated bins ``M + 2G``."""
        return int(self.mode_count + 2 * self.guard_modes)

    @property
    def dim(self) -> int:
        return 4 * self.n_bins

    @property
    def centers(self) -> np.ndarray:
        return self.start_center + self.spacing * np.arange(self.n_bins)

    @property
    def interior(self) -> np.ndarray:
        """Bin indices of the reported modes."""
        g = int(self.guard_modes)
        return np.arange(g, g + int(self.mode_count))

    @property
    def top_edge(self) -> float:
        return float(self.centers[-1] + self.bin_width / 2)

    def offset_of(self, frequency: float) -> int:
        """Bin offset ``k = frequency / spacing``; raises unless it is an integer."""
        k = frequency / self.spacing
        kr = round(k)
        if kr < 1 or abs(k - kr) > 1e-9 * max(1.0, abs(k)):
            raise ValueError(
                f"frequency {frequency} Hz is not a positive integer multiple of spacing {self.spacing} Hz"
            )
        return int(kr)

    def index(self, quad: str, i: int | np.ndarray) -> int | np.ndarray:
        """Row index of quadrature ``quad`` (one of Xp, Xc, Pp, Pc) for bin ``i``."""
        return ORDERING.index(quad) * self.n_bins + i

    def interior_indices(self) -> np.ndarray:
        """Covariance-matrix indices of all four quadratures of interior bins."""
        n = self.n_bins
        return np.concatenate([self.interior + b * n for b in range(4)])

    def to_dict(self) -> dict:
        return {
            "mode_count": int(self.mode_count),
            "spacing": float(self.spacing),
            "bin_width": float(self.bin_width),
            "start_center": float(self.start_center),
            "guard_modes": int(self.guard_modes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModeLayout":
        return cls(
            mode_count=int(d["mode_count"]),
            spacing=float(d["spacing"]),
            bin_width=float(d["bin_width"]),
            start_center=float(d["start_center"]),
            guard_modes=int(d.get("guard_modes", 0)),
        )


@dataclass(frozen=True)
class DriveTone:
    """One sinusoidal EOM drive component ``m cos(Omega t + phase)``."""

    frequency: float
    mod_index: float
    phase: float = 0.0

    def __post_init__(self) -> None:
        if not self.frequency > 0:
            raise ValueError("tone frequency must be positive")
        if not (self.mod_index >= 0 and math.isfinite(self.mod_index)):
            raise ValueError(f"modulation index must be finite and >= 0, got {self.mod_index}")
        if self.mod_index > MOD_INDEX_WARN:
            warnings.warn(
                f"modulation index {self.mod_index} > {MOD_INDEX_WARN}: higher sidebands are no longer small",
                stacklevel=3,
            )

    def to_dict(self) -> dict:
        return {"frequency": float(self.frequency), "mod_index": float(self.mod_index), "phase": float(self.phase)}


@dataclass(frozen=True)
class DriveSpec:
    """Set of drive tones applied to one EOM (or split over both beams)."""

    tones: tuple[DriveTone, ...] = ()
    target_beam: str = "conjugate"

    def __post_init__(self) -> None:
        object.__setattr__(self, "tones", tuple(self.tones))
        if self.target_beam not in BEAMS:
            raise ValueError(f"target_beam must be one of {BEAMS}, got {self.target_beam!r}")
        freqs = [t.frequency for t in self.tones]
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ValueError("tone frequencies must be strictly increasing")

    @property
    def frequencies(self) -> list[float]:
        return [t.frequency for t in self.tones]

    def offsets(self, layout: ModeLayout) -> list[int]:
        return [layout.offset_of(t.frequency) for t in self.tones]

    def to_dict(self) -> dict:
        return {"tones": [t.to_dict() for t in self.tones], "target_beam": self.target_beam}

    @classmethod
    def from_dict(cls, d: dict) -> "DriveSpec":
        tones = tuple(
            DriveTone(float(t["frequency"]), float(t["mod_index"]), float(t.get("phase", 0.0)))
            for t in d.get("tones", [])
        )
        return cls(tones, d.get("target_beam", "conjugate"))


def squeeze_db_to_r(db: float | np.ndarray) -> float | np.ndarray:
    """Squeezing parameter giving a normalized EPR variance of ``db`` decibels.

    The EPR variance of a two-mode squeezer is ``exp(-4 r)`` in shot units.
    """
    return -np.log(10.0 ** (np.asarray(db, dtype=float) / 10.0)) / 4.0


def r_to_squeeze_db(r: float | np.ndarray) -> float | np.ndarray:
    return 10.0 * np.log10(np.exp(-4.0 * np.asarray(r, dtype=float)))


@dataclass(frozen=True)
class SqueezeProfile:
    """Per-bin two-mode squeezing parameter ``r_i``, guards included."""

    r_of_bin: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        r = np.array(self.r_of_bin, dtype=float).reshape(-1)
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValueError("squeezing parameters must be finite and >= 0")
        r.setflags(write=False)
        object.__setattr__(self, "r_of_bin", r)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SqueezeProfile):
            return NotImplemented
        return bool(np.array_equal(self.r_of_bin, other.r_of_bin))

    def __hash__(self) -> int:
        return hash(self.r_of_bin.tobytes())

    @classmethod
    def flat(cls, layout: ModeLayout, db: float) -> "SqueezeProfile":
        """Same EPR squeezing ``db`` (negative number) in every bin."""
        return cls(np.full(layout.n_bins, float(squeeze_db_to_r(min(db, 0.0)))))

    @classmethod
    def smooth(
        cls,
        layout: ModeLayout,
        peak_db: float = -3.0,
        bandwidth_hz: float = 20e6,
        low_cut_hz: float | None = None,
    ) -> "SqueezeProfile":
        """Gain-tracking profile: ``peak_db`` at low frequency, near 0 dB at ``bandwidth_hz``."""
        return cls(squeeze_db_to_r(smooth_profile_db(layout.centers, peak_db, bandwidth_hz, low_cut_hz)))

    def r_at(self, freqs: np.ndarray, layout: ModeLayout) -> np.ndarray:
        """Interpolate ``r`` to arbitrary frequencies, holding the edge values outside the layout."""
        if self.r_of_bin.size != layout.n_bins:
            raise ValueError("profile length does not match layout")
        f = np.abs(np.asarray(freqs, dtype=float))
        return np.interp(f, layout.centers, self.r_of_bin)


def smooth_profile_db(
    freqs: np.ndarray,
    peak_db: float = -3.0,
    bandwidth_hz: float = 20e6,
    low_cut_hz: float | None = None,
) -> np.ndarray:
    """EPR squeezing in dB for the default gain-tracking source model."""
    f = np.abs(np.asarray(freqs, dtype=float))
    db = min(peak_db, 0.0) * np.exp(-((2.0 * f / bandwidth_hz) ** 2))
    if low_cut_hz:
        db = db * f**2 / (f**2 + low_cut_hz**2)
    return db


def bessel_j(n: int, m: float) -> float:
    """Bessel function of the first kind ``J_n(m)`` for integer order ``n >= 0``."""
    if n < 0 or int(n) != n:
        raise ValueError("order must be a non-negative integer")
    if m < 0:
        raise ValueError("argument must be >= 0")
    return float(special.jv(int(n), m))


def modulation_index(v_drive: float, v_halfwave: float) -> float:
    """Peak phase deviation ``pi V / (2 V_pi)`` of a sinusoid with amplitude ``v_drive``."""
    return math.pi * v_drive / (2.0 * v_halfwave)


def vacuum_covariance(layout: ModeLayout) -> np.ndarray:
    """Vacuum state: ``I / 2`` in absolute units."""
    return 0.5 * np.eye(layout.dim)


def symplectic_form(n_bins: int) -> np.ndarray:
    """Canonical form ``[[0, I], [-I, 0]]`` for the (X..., P...) ordering."""
    z = np.zeros((2 * n_bins, 2 * n_bins))
    i = np.eye(2 * n_bins)
    return np.block([[z, i], [-i, z]])


def tms_symplectic(layout: ModeLayout, profile: SqueezeProfile) -> np.ndarray:
    """Two-mode squeezer acting independently in every bin.

    ``(Xp, Xc)`` mix with ``[[cosh 2r, sinh 2r], [sinh 2r, cosh 2r]]`` and
    ``(Pp, Pc)`` with the sign of the ``sinh`` terms flipped.
    """
    n = layout.n_bins
    r = np.asarray(profile.r_of_bin, dtype=float)
    if r.size != n:
        raise ValueError(f"profile has {r.size} bins, layout has {n}")
    c, s = np.cosh(2 * r), np.sinh(2 * r)
    i = np.arange(n)
    S = np.eye(4 * n)
    xp, xc, pp, pc = i, n + i, 2 * n + i, 3 * n + i
    S[xp, xp] = c
    S[xp, xc] = s
    S[xc, xp] = s
    S[xc, xc] = c
    S[pp, pp] = c
    S[pp, pc] = -s
    S[pc, pp] = -s
    S[pc, pc] = c
    return S


def _beam_blocks(n: int, k: int, m: float, model: str) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(A, B)`` so that ``X' = A X + B P`` and ``P' = -B X + A P`` on one beam."""
    if model == "truncated":
        y = np.eye(n, k=k) + np.eye(n, k=-k)
        return bessel_j(0, m) * np.eye(n), bessel_j(1, m) * y
    if model == "exact":
        # Exponential of the first-sideband generator; in the interior the
        # entries are the full Bessel series (J0 on the diagonal, J1 at +-k,
        # -J2 at +-2k, ...).
        y = np.eye(n, k=k) + np.eye(n, k=-k)
        w, q = np.linalg.eigh(y)
        a = (q * np.cos(0.5 * m * w)) @ q.T
        b = (q * np.sin(0.5 * m * w)) @ q.T
        return a, b
    raise ValueError(f"model must be one of {EOM_MODELS}, got {model!r}")


def _embed_beam(n: int, beam_offset: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    S = np.eye(4 * n)
    ix = np.arange(beam_offset, beam_offset + n)
    ip = 2 * n + ix
    S[np.ix_(ix, ix)] = a
    S[np.ix_(ix, ip)] = b
    S[np.ix_(ip, ix)] = -b
    S[np.ix_(ip, ip)] = a
    return S


def eom_symplectic_single(
    layout: ModeLayout,
    tone: DriveTone,
    beam: str = "conjugate",
    model: str = "exact",
) -> np.ndarray:
    """Symplectic matrix of one in-phase drive tone.

    Parameters
    ----------
    layout : ModeLayout
    tone : DriveTone
        Must have zero phase; the analytic engine assumes in-phase drive.
    beam : {"probe", "conjugate", "both-halved"}
        Where the modulator sits.  ``"both-halved"`` places index ``m/2`` in
        each beam.
    model : {"exact", "truncated"}
        ``"truncated"`` is the literal first-sideband matrix with ``J0`` on
        the diagonal and ``+-J1`` at offset ``k``.  It is symplectic only to
        ``O(J1^2)``.  ``"exact"`` exponentiates the same first-sideband
        coupling, which is exactly symplectic and reproduces ``J0``/``J1``
        on interior modes.

    Returns
    -------
    numpy.ndarray
        ``4n x 4n`` matrix with blocks ``[[A, B], [-B, A]]`` on the modulated
        beam, ``B`` carrying the positive ``J1`` entries.
    """
    if tone.phase != 0.0:
        raise ValueError("analytic EOM matrices require zero tone phase")
    if beam not in BEAMS:
        raise ValueError(f"beam must be one of {BEAMS}, got {beam!r}")
    n = layout.n_bins
    k = layout.offset_of(tone.frequency)
    if k > n - 1:
        raise ValueError(f"tone offset {k} exceeds the {n}-bin layout")
    if beam == "both-halved":
        a, b = _beam_blocks(n, k, tone.mod_index / 2.0, model)
        return _embed_beam(n, 0, a, b) @ _embed_beam(n, n, a, b)
    a, b = _beam_blocks(n, k, tone.mod_index, model)
    return _embed_beam(n, 0 if beam == "probe" else n, a, b)


def eom_symplectic(
    layout: ModeLayout,
    drive: DriveSpec,
    beam: str | None = None,
    model: str = "exact",
) -> np.ndarray:
    """Ordered product of single-tone matrices, lowest frequency applied first.

    ``beam`` defaults to ``drive.target_beam``.
    """
    beam = drive.target_beam if beam is None else beam
    S = np.eye(layout.dim)
    for tone in sorted(drive.tones, key=lambda t: t.frequency):
        S = eom_symplectic_single(layout, tone, beam, model) @ S
    return S


def apply(S: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """``S Sigma S^T``, symmetrized."""
    S = np.asarray(S, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if S.ndim != 2 or sigma.shape != (S.shape[1], S.shape[1]):
        raise ValueError(f"dimension mismatch: S {S.shape}, Sigma {sigma.shape}")
    out = S @ sigma @ S.T
    return 0.5 * (out + out.T)


def symplectic_defect(S: np.ndarray, indices: Sequence[int] | None = None) -> float:
    """Largest absolute entry of ``S Omega S^T - Omega``.

    ``indices`` restricts the comparison to a sub-block, e.g. interior modes.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] % 2:
        raise ValueError("S must be square with even dimension")
    om = symplectic_form(S.shape[0] // 4) if S.shape[0] % 4 == 0 else _form2(S.shape[0] // 2)
    d = S @ om @ S.T - om
    if indices is not None:
        idx = np.asarray(indices)
        d = d[np.ix_(idx, idx)]
    return float(np.max(np.abs(d))) if d.size else 0.0


def _form2(n: int) -> np.ndarray:
    z = np.zeros((n, n))
    i = np.eye(n)
    return np.block([[z, i], [-i, z]])


def theory_covariance(
    layout: ModeLayout,
    profile: SqueezeProfile,
    drive: DriveSpec | None = None,
    beam: str | None = None,
    model: str = "exact",
) -> np.ndarray:
    """Covariance of vacuum after the two-mode squeezer and then the EOM."""
    sigma = apply(tms_symplectic(layout, profile), vacuum_covariance(layout))
    if drive is not None and drive.tones:
        sigma = apply(eom_symplectic(layout, drive, beam, model), sigma)
    return sigma


def shot_normalized(sigma: np.ndarray) -> np.ndarray:
    """Convert absolute units (vacuum 1/2) to shot units (vacuum 1)."""
    return 2.0 * np.asarray(sigma, dtype=float)
