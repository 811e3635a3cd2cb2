"""Analysis pipeline for digitized homodyne traces.

Each trace is Fourier transformed once over a window holding whole drive
periods.  Every frequency bin is cut out with a sharp mask and its
positive-frequency coefficients are moved to one common demodulation
frequency, so all bins share a time reference.  Covariances between bins
are then plain time averages of the real demodulated series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import minimize_scalar

from .gaussian import DriveSpec, ModeLayout
from .synth import whole_period_samples

BLOCKS = ("Xp", "Xc", "Pp", "Pc")
LABELS = ("XX", "PP", "XP")
# Sectors a complete signal measurement needs, with the runs that provide them.
SECTORS = {
    "XpXp": ("XX", "XP"),
    "XcXc": ("XX",),
    "XpXc": ("XX",),
    "PpPp": ("PP",),
    "PcPc": ("PP", "XP"),
    "PpPc": ("PP",),
    "XpPc": ("XP",),
}


class DelayNotFound(RuntimeError):
    """The delay objective is flat: the traces are not EPR correlated."""


class MissingSectorError(ValueError):
    def __init__(self, sectors: list[str]):
        self.sectors = sectors
        super().__init__("missing covariance sectors: " + ", ".join(sectors))


@dataclass
class BinnedSignal:
    """Complex demodulated series of every bin, all at ``demod_hz``.

    ``series[b]`` is the analytic signal of bin ``b`` after its spectrum
    was moved from the bin center to ``demod_hz``; ``2 Re(series)`` is the
    real band-limited signal sampled ``L`` times over the window.
    """

    series: np.ndarray
    layout: ModeLayout
    demod_hz: float
    window_s: float
    n_window: int
    dt: float
    trimmed: int = 0

    @property
    def real(self) -> np.ndarray:
        return 2.0 * self.series.real

    @property
    def centers(self) -> np.ndarray:
        return self.layout.centers

    @property
    def length(self) -> int:
        return int(self.series.shape[1])

    @property
    def df(self) -> float:
        return 1.0 / self.window_s


def trim_length(n: int, dt: float, freqs: list[float]) -> int:
    """Largest sample count ``<= n`` that holds whole periods of all ``freqs``."""
    if not freqs:
        return n
    unit = whole_period_samples(dt, freqs)
    if unit > n:
        raise ValueError(f"window of {n} samples is shorter than one common drive period ({unit})")
    return (n // unit) * unit


def _bin_geometry(layout: ModeLayout, n: int, dt: float) -> tuple[np.ndarray, np.ndarray, int]:
    df = 1.0 / (n * dt)
    kc = np.rint(layout.centers / df).astype(int)
    half = int(math.floor(layout.bin_width / 2 / df + 1e-9))
    offs = np.arange(-half, half + 1)
    return kc, offs, half


def bin_filter(
    trace: np.ndarray,
    dt: float,
    layout: ModeLayout,
    tones: list[float] | None = None,
    delay_s: float = 0.0,
) -> BinnedSignal:
    """Mask every bin out of the trace spectrum and demodulate to a common frequency.

    Parameters
    ----------
    trace : numpy.ndarray
        Real samples.  Any length is accepted.
    dt : float
        Sample interval.
    layout : ModeLayout
    tones : list of float, optional
        Drive frequencies; the window is trimmed from the tail to a whole
        number of their common period.
    delay_s : float
        Delay of this trace to undo, applied as a spectral phase ramp.

    Returns
    -------
    BinnedSignal
        Demodulated to the center of the first bin.
    """
    x = np.asarray(trace, dtype=float)
    n0 = x.size
    n = trim_length(n0, dt, list(tones or []))
    nyquist = 0.5 / dt
    if layout.top_edge >= nyquist:
        raise ValueError(f"bin edge {layout.top_edge} Hz is above Nyquist {nyquist} Hz")
    if layout.bin_width >= layout.spacing:
        raise ValueError("bins overlap")
    spec = np.fft.rfft(x[:n])
    if delay_s:
        spec = spec * np.exp(2j * np.pi * np.fft.rfftfreq(n, dt) * delay_s)
    kc, offs, half = _bin_geometry(layout, n, dt)
    kd = int(kc[0])
    length = 1 << int(math.ceil(math.log2(2 * (kd + half) + 2)))
    placed = np.zeros((layout.n_bins, length), dtype=complex)
    placed[:, kd + offs] = spec[kc[:, None] + offs[None, :]]
    # ifft carries 1/L; rescale so 2 Re(z) is the band-limited trace itself.
    z = np.fft.ifft(placed, axis=1) * (length / n)
    return BinnedSignal(
        series=z,
        layout=layout,
        demod_hz=kd / (n * dt),
        window_s=n * dt,
        n_window=n,
        dt=dt,
        trimmed=n0 - n,
    )


def _check_common(a: BinnedSignal, b: BinnedSignal) -> None:
    if a.n_window != b.n_window or a.length != b.length or a.demod_hz != b.demod_hz or a.layout != b.layout:
        raise ValueError("binned signals do not share a window and demodulation reference")


def quad_covariance(a: BinnedSignal, b: BinnedSignal) -> np.ndarray:
    """Real covariance ``<x_a,i x_b,j>`` between all bins of two signals."""
    _check_common(a, b)
    return (a.real @ b.real.T) / a.length


def complex_covariance(a: BinnedSignal, b: BinnedSignal) -> np.ndarray:
    """``2 <z_a,i conj(z_b,j)>``; its real part equals :func:`quad_covariance`."""
    _check_common(a, b)
    return 2.0 * (a.series @ b.series.conj().T) / a.length


@dataclass(frozen=True)
class LockinResult:
    amplitude: float
    phase: float
    in_phase: float
    quadrature: float

    def at_phase(self, phase: float) -> float:
        """Covariance projected onto a reference phase."""
        return self.amplitude * math.cos(self.phase - phase)


def lockin_xp(
    x: BinnedSignal, i: int, p: BinnedSignal, j: int, tone_hz: float, rel_tol: float = 1e-6
) -> LockinResult:
    """Software lock-in of ``X(f_i) P(f_j)`` against ``cos`` and ``sin`` of the tone.

    Both bins are rebuilt at their native frequency separation on a common
    heterodyne grid, multiplied sample by sample, and averaged against
    ``2 cos(Omega t)`` (in-phase ``I``) and ``2 sin(Omega t)`` (``Q``).  The
    returned phase is ``atan2(-Q, I)``; a drive tone with phase ``phi``
    rotates it by ``+phi``.  At phase zero ``I`` equals the direct
    covariance of the two demodulated bins.
    """
    _check_common(x, p)
    sep = p.centers[j] - x.centers[i]
    if abs(abs(sep) - tone_hz) > rel_tol * tone_hz:
        raise ValueError(f"bin separation {sep} Hz does not match tone {tone_hz} Hz")
    df = x.df
    shift = int(round(sep / df))
    if abs(shift * df - sep) > rel_tol * tone_hz:
        raise ValueError("tone is not on the window's frequency grid")
    L = x.length
    za = np.fft.fft(x.series[i])
    zb = np.fft.fft(p.series[j])
    occupied = np.nonzero((np.abs(za) > 0) | (np.abs(zb) > 0))[0]
    top = int(occupied.max()) if occupied.size else 0
    lo = min(0, shift)
    L2 = 1 << int(math.ceil(math.log2(2 * (top + abs(shift) - lo) + abs(shift) + 2)))
    base = -lo
    a2 = np.zeros(L2, dtype=complex)
    b2 = np.zeros(L2, dtype=complex)
    a2[base : base + L] = za
    b2[base + shift : base + shift + L] = zb
    xa = 2.0 * (np.fft.ifft(a2) * (L2 / L)).real
    xb = 2.0 * (np.fft.ifft(b2) * (L2 / L)).real
    t = np.arange(L2) * (x.window_s / L2)
    ref = 2 * np.pi * tone_hz * t
    prod = xa * xb
    I = float(np.mean(prod * 2.0 * np.cos(ref)))
    Q = float(np.mean(prod * 2.0 * np.sin(ref)))
    return LockinResult(math.hypot(I, Q), math.atan2(-Q, I), I, Q)


def lockin_matrix(x: BinnedSignal, p: BinnedSignal, offset: int) -> tuple[np.ndarray, np.ndarray]:
    """Lock-in phasors of all pairs separated by ``offset`` bins.

    Returns ``(upper, lower)`` where ``upper[i]`` is the phasor
    ``I - iQ`` of ``X(i) P(i + offset)`` and ``lower[i]`` that of
    ``X(i + offset) P(i)``.  Equivalent to :func:`lockin_xp` pair by pair.
    """
    c = complex_covariance(x, p)
    n = c.shape[0]
    i = np.arange(n - offset)
    return np.conj(c[i, i + offset]), c[i + offset, i]


def estimate_delay(
    probe: np.ndarray,
    conjugate: np.ndarray,
    dt: float,
    layout: ModeLayout,
    search: tuple[float, float] = (-50e-9, 50e-9),
    step: float = 0.2e-9,
    min_significance: float = 8.0,
) -> float:
    """Delay of the conjugate trace that maximizes broadband EPR correlation.

    Scans ``search`` with spectral phase ramps, then refines the best grid
    point.  The objective is the mean over bins of the normalized in-bin
    probe/conjugate correlation, whose magnitude is largest when the
    summed EPR variance is smallest.

    Raises
    ------
    DelayNotFound
        If the best correlation is not significant against its noise floor.
    """
    x = np.asarray(probe, dtype=float)
    y = np.asarray(conjugate, dtype=float)
    n = min(x.size, y.size)
    X = np.fft.rfft(x[:n])
    Y = np.fft.rfft(y[:n])
    kc, offs, _ = _bin_geometry(layout, n, dt)
    idx = kc[:, None] + offs[None, :]
    cross = X[idx] * np.conj(Y[idx])
    power = (np.abs(X[idx]) ** 2 + np.abs(Y[idx]) ** 2).sum(axis=1)
    freqs = idx / (n * dt)

    def h(tau: float) -> float:
        c = (cross * np.exp(-2j * np.pi * freqs * tau)).real.sum(axis=1)
        return float(np.mean(c / power))

    grid = np.arange(search[0], search[1] + step / 2, step)
    vals = np.array([h(t) for t in grid])
    best = int(np.argmax(np.abs(vals)))
    noise = 1.0 / math.sqrt(2.0 * idx.size)
    if abs(vals[best]) < min_significance * noise:
        raise DelayNotFound(f"no EPR correlation found (peak {abs(vals[best]):.3g}, noise {noise:.3g})")
    sign = math.copysign(1.0, vals[best])
    lo = max(search[0], grid[best] - step)
    hi = min(search[1], grid[best] + step)
    res = minimize_scalar(lambda t: -sign * h(t), bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    return float(res.x)


@dataclass
class RunData:
    """One analyzed measurement: both detectors binned on a common reference."""

    label: str
    probe: BinnedSignal
    conjugate: BinnedSignal
    role: str = "signal"
    drive: DriveSpec | None = None

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        _check_common(self.probe, self.conjugate)

    @property
    def shot(self) -> bool:
        return self.role == "shot"


def analyze_traces(
    probe: np.ndarray,
    conjugate: np.ndarray,
    dt: float,
    layout: ModeLayout,
    label: str,
    role: str = "signal",
    drive: DriveSpec | None = None,
    delay_s: float = 0.0,
) -> RunData:
    """Bin both detector traces of a run, undoing the conjugate delay."""
    tones = [] if drive is None else drive.frequencies
    return RunData(
        label=label,
        probe=bin_filter(probe, dt, layout, tones),
        conjugate=bin_filter(conjugate, dt, layout, tones, delay_s=delay_s),
        role=role,
        drive=drive,
    )


@dataclass
class CovarianceEstimate:
    """Run-averaged covariance with a 4x4 block fill mask over ``(Xp, Xc, Pp, Pc)``."""

    matrix: np.ndarray
    mask: np.ndarray
    run_count: int
    normalization: str
    layout: ModeLayout
    stderr: np.ndarray | None = None
    runs_per_label: dict = field(default_factory=dict)
    window_s: float = 0.0

    def block(self, a: str, b: str) -> np.ndarray:
        n = self.layout.n_bins
        i, j = BLOCKS.index(a), BLOCKS.index(b)
        return self.matrix[i * n : (i + 1) * n, j * n : (j + 1) * n]

    def detector_variances(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-bin variance of each detector, averaged over the quadratures measured."""
        out = []
        for names in (("Xp", "Pp"), ("Xc", "Pc")):
            vals = [np.diag(self.block(q, q)) for q in names if self.mask[BLOCKS.index(q), BLOCKS.index(q)]]
            if not vals:
                raise ValueError("estimate has no variance for a detector")
            out.append(np.mean(vals, axis=0))
        return out[0], out[1]


def _run_sectors(run: RunData) -> dict[str, np.ndarray]:
    pp = quad_covariance(run.probe, run.probe)
    cc = quad_covariance(run.conjugate, run.conjugate)
    pc = quad_covariance(run.probe, run.conjugate)
    if run.label == "XX":
        return {"XpXp": pp, "XcXc": cc, "XpXc": pc}
    if run.label == "PP":
        return {"PpPp": pp, "PcPc": cc, "PpPc": pc}
    return {"XpXp": pp, "PcPc": cc, "XpPc": pc}


def assemble_covariance(runs: list[RunData], require_complete: bool = True) -> CovarianceEstimate:
    """Average per-run covariance sectors into one matrix.

    ``XpPc`` measured in XP runs is also used for ``XcPp`` (transposed), and
    the lower triangle is filled by symmetry.  Same-beam XP blocks are not
    measured; they stay zero and their mask bits stay cleared.
    """
    if not runs:
        raise ValueError("no runs to assemble")
    n = runs[0].probe.series.shape[0]
    win = runs[0].probe.n_window
    ref_drive = runs[0].drive
    for r in runs:
        if r.probe.layout != runs[0].probe.layout or r.probe.n_window != win:
            raise ValueError("runs have inconsistent layouts or windows")
        if r.role == "signal" and ref_drive is not None and r.drive is not None and r.drive != ref_drive:
            raise ValueError("runs have inconsistent drive settings")
    per: dict[str, list[np.ndarray]] = {}
    labels: dict[str, int] = {}
    for r in runs:
        labels[r.label] = labels.get(r.label, 0) + 1
        for k, v in _run_sectors(r).items():
            per.setdefault(k, []).append(v)
    missing = [s for s in SECTORS if s not in per]
    if require_complete and missing:
        raise MissingSectorError(missing)

    sig = np.zeros((4 * n, 4 * n))
    err = np.zeros((4 * n, 4 * n))
    mask = np.zeros((4, 4), dtype=bool)

    def put(a: str, b: str, m: np.ndarray, e: np.ndarray) -> None:
        i, j = BLOCKS.index(a), BLOCKS.index(b)
        sig[i * n : (i + 1) * n, j * n : (j + 1) * n] = m
        err[i * n : (i + 1) * n, j * n : (j + 1) * n] = e
        mask[i, j] = True
        if i != j:
            sig[j * n : (j + 1) * n, i * n : (i + 1) * n] = m.T
            err[j * n : (j + 1) * n, i * n : (i + 1) * n] = e.T
            mask[j, i] = True

    for name, stack in per.items():
        arr = np.array(stack)
        mean = arr.mean(axis=0)
        se = arr.std(axis=0, ddof=1) / math.sqrt(len(stack)) if len(stack) > 1 else np.full_like(mean, np.nan)
        a, b = name[:2], name[2:]
        if a == b:
            mean = 0.5 * (mean + mean.T)
        put(a, b, mean, se)
        if name == "XpPc":
            put("Xc", "Pp", mean.T, se.T)
    layout = runs[0].probe.layout
    return CovarianceEstimate(
        matrix=sig,
        mask=mask,
        run_count=len(runs),
        normalization="absolute",
        layout=layout,
        stderr=err,
        runs_per_label=labels,
        window_s=runs[0].probe.window_s,
    )


def _coordinate_variances(est: CovarianceEstimate) -> np.ndarray:
    p, c = est.detector_variances()
    return np.concatenate([p, c, p, c])


def normalize(
    est: CovarianceEstimate,
    shot: CovarianceEstimate,
    mode: str = "shot-ratio",
    elec: CovarianceEstimate | None = None,
) -> CovarianceEstimate:
    """Express a covariance in shot-noise units.

    ``"shot-ratio"`` divides entry ``(a, b)`` by ``sqrt(shot_a shot_b)``.
    ``"elec-subtract"`` first removes the electronic-noise variance from
    the signal and shot diagonals, using the dark runs in ``elec``.
    """
    if est.matrix.shape != shot.matrix.shape:
        raise ValueError("signal and shot layouts differ")
    d = _coordinate_variances(shot)
    sig = est.matrix.copy()
    if mode == "elec-subtract":
        if elec is None:
            raise ValueError("elec-subtract needs an electronic-noise estimate")
        e = _coordinate_variances(elec)
        measured_diag = np.repeat(np.diag(est.mask), est.layout.n_bins)
        sig[np.diag_indices_from(sig)] -= np.where(measured_diag, e, 0.0)
        d = d - e
    elif mode != "shot-ratio":
        raise ValueError("mode must be 'shot-ratio' or 'elec-subtract'")
    if np.any(d <= 0):
        raise ValueError("nonpositive shot-noise variance in some bin")
    scale = np.sqrt(np.outer(d, d))
    stderr = None if est.stderr is None else est.stderr / scale
    return CovarianceEstimate(
        matrix=sig / scale,
        mask=est.mask.copy(),
        run_count=est.run_count,
        normalization="shot-normalized",
        layout=est.layout,
        stderr=stderr,
        runs_per_label=dict(est.runs_per_label),
        window_s=est.window_s,
    )


def squeezing_spectrum(
    run: RunData | list[RunData],
    shot: CovarianceEstimate,
    elec: CovarianceEstimate | None = None,
    mode: str = "shot-ratio",
) -> np.ndarray:
    """Per-bin normalized EPR variance in dB for XX (``Xp - Xc``) or PP (``Pp + Pc``) runs."""
    runs = run if isinstance(run, list) else [run]
    label = runs[0].label
    if label not in ("XX", "PP") or any(r.label != label for r in runs):
        raise ValueError("squeezing spectrum needs XX or PP runs of one kind")
    est = assemble_covariance(runs, require_complete=False)
    norm = normalize(est, shot, mode, elec)
    n = est.matrix.shape[0] // 4
    if label == "XX":
        a, b, sign = norm.block("Xp", "Xp"), norm.block("Xc", "Xc"), -1.0
        c = norm.block("Xp", "Xc")
    else:
        a, b, sign = norm.block("Pp", "Pp"), norm.block("Pc", "Pc"), 1.0
        c = norm.block("Pp", "Pc")
    i = np.arange(n)
    v = 0.5 * (a[i, i] + b[i, i] + 2 * sign * c[i, i])
    return 10.0 * np.log10(v)


def rational_period(freq: float, dt: float) -> Fraction:
    """Period of ``freq`` in samples as an exact fraction."""
    return Fraction(1.0 / (freq * dt)).limit_denominator(10**6)
