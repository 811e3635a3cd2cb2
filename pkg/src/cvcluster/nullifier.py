"""Nullifier witnesses for EOM-mixed two-mode squeezed states.

Nullifier matrices have ``2n`` rows over the ``4n`` quadratures: the
``n`` X-nullifier rows (probe minus conjugate) first, then the ``n``
P-nullifier rows (probe plus conjugate).  A row's variance is
``row @ Sigma @ row``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gaussian import DriveTone, ModeLayout, bessel_j


@dataclass(frozen=True)
class NullifierMatrix:
    """Rows of nullifier coefficients; X rows then P rows."""

    rows: np.ndarray
    layout: ModeLayout

    def __post_init__(self) -> None:
        n = self.layout.n_bins
        if self.rows.shape != (2 * n, 4 * n):
            raise ValueError(f"nullifier matrix must be {(2 * n, 4 * n)}, got {self.rows.shape}")

    @property
    def x_rows(self) -> np.ndarray:
        return self.rows[: self.layout.n_bins]

    @property
    def p_rows(self) -> np.ndarray:
        return self.rows[self.layout.n_bins :]

    def row(self, quadrature: str, mode: int) -> np.ndarray:
        if quadrature not in ("X", "P"):
            raise ValueError("quadrature must be 'X' or 'P'")
        return self.rows[mode + (self.layout.n_bins if quadrature == "P" else 0)]


def epr_nullifier_matrix(layout: ModeLayout) -> NullifierMatrix:
    """Unit-weight EPR rows: ``Xp_i - Xc_i`` and ``Pp_i + Pc_i``."""
    n = layout.n_bins
    i = np.arange(n)
    rows = np.zeros((2 * n, 4 * n))
    rows[i, i] = 1.0
    rows[i, n + i] = -1.0
    rows[n + i, 2 * n + i] = 1.0
    rows[n + i, 3 * n + i] = 1.0
    return NullifierMatrix(rows, layout)


def transform_nullifiers(
    N: NullifierMatrix, S_eom: np.ndarray, inverse: str = "transpose"
) -> NullifierMatrix:
    """Carry nullifiers through a mode-mixing transform: ``N' = N S^-1``.

    Parameters
    ----------
    N : NullifierMatrix
    S_eom : numpy.ndarray
        EOM symplectic matrix.
    inverse : {"transpose", "solve"}
        A phase modulator is passive, so ``S^-1 = S^T``.  ``"transpose"``
        uses that identity, which for the truncated first-sideband matrix is
        the matrix of the opposite modulation index and keeps the row weights
        pure ``J0``/``J1`` products.  ``"solve"`` inverts ``S`` numerically.
    """
    S = np.asarray(S_eom, dtype=float)
    if S.shape != (N.rows.shape[1], N.rows.shape[1]):
        raise ValueError(f"dimension mismatch: N {N.rows.shape}, S {S.shape}")
    if inverse == "transpose":
        return NullifierMatrix(N.rows @ S.T, N.layout)
    if inverse == "solve":
        try:
            rows = np.linalg.solve(S.T, N.rows.T).T
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("EOM matrix is singular") from exc
        return NullifierMatrix(rows, N.layout)
    raise ValueError("inverse must be 'transpose' or 'solve'")


def nullifier_variance(N: NullifierMatrix | np.ndarray, row: int, sigma: np.ndarray) -> float:
    """Variance ``N_row Sigma N_row^T`` of one nullifier row."""
    rows = N.rows if isinstance(N, NullifierMatrix) else np.asarray(N)
    v = rows[row]
    if sigma.shape != (v.size, v.size):
        raise ValueError("dimension mismatch")
    return float(v @ sigma @ v)


def nullifier_variances(N: NullifierMatrix | np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Variances of all rows, ``diag(N Sigma N^T)``."""
    rows = N.rows if isinstance(N, NullifierMatrix) else np.asarray(N)
    return np.einsum("ij,jk,ik->i", rows, sigma, rows)


def direct_expansion_variance(
    sigma: np.ndarray,
    layout: ModeLayout,
    mode: int,
    tone: DriveTone,
    quadrature: str,
) -> float:
    """Nullifier variance written out term by term for a single drive tone.

    After the EOM on the conjugate beam, the X nullifier of mode ``i`` is
    ``Xp(i) - J0 Xc(i) + J1 Pc(i-k) + J1 Pc(i+k)`` and the P nullifier is
    ``Pp(i) + J0 Pc(i) + J1 Xc(i-k) + J1 Xc(i+k)``.  The variance is summed
    from the individual second moments in the same order they appear when
    the product is expanded, without forming a nullifier vector.
    """
    n = layout.n_bins
    k = layout.offset_of(tone.frequency)
    if mode - k < 0 or mode + k >= n:
        raise ValueError(f"mode {mode} is within {k} bins of the spectral edge")
    j0 = bessel_j(0, tone.mod_index)
    j1 = bessel_j(1, tone.mod_index)

    def c(a: str, i: int, b: str, j: int) -> float:
        return float(sigma[layout.index(a, i), layout.index(b, j)])

    i, lo, hi = mode, mode - k, mode + k
    if quadrature == "X":
        terms = [
            c("Xp", i, "Xp", i),
            -j0 * c("Xp", i, "Xc", i),
            j1 * c("Xp", i, "Pc", lo),
            j1 * c("Xp", i, "Pc", hi),
            -j0 * c("Xc", i, "Xp", i),
            j0**2 * c("Xc", i, "Xc", i),
            -j0 * j1 * (c("Xc", i, "Pc", lo) + c("Xc", i, "Pc", hi)),
            j1 * c("Pc", lo, "Xp", i),
            -j0 * j1 * c("Pc", lo, "Xc", i),
            j1**2 * (c("Pc", lo, "Pc", lo) + c("Pc", lo, "Pc", hi)),
            j1 * c("Pc", hi, "Xp", i),
            -j0 * j1 * c("Pc", hi, "Xc", i),
            j1**2 * (c("Pc", hi, "Pc", lo) + c("Pc", hi, "Pc", hi)),
        ]
    elif quadrature == "P":
        terms = [
            c("Pp", i, "Pp", i),
            j0 * c("Pp", i, "Pc", i),
            j1 * c("Pp", i, "Xc", lo),
            j1 * c("Pp", i, "Xc", hi),
            j0 * c("Pc", i, "Pp", i),
            j0**2 * c("Pc", i, "Pc", i),
            j0 * j1 * (c("Pc", i, "Xc", lo) + c("Pc", i, "Xc", hi)),
            j1 * c("Xc", lo, "Pp", i),
            j0 * j1 * c("Xc", lo, "Pc", i),
            j1**2 * (c("Xc", lo, "Xc", lo) + c("Xc", lo, "Xc", hi)),
            j1 * c("Xc", hi, "Pp", i),
            j0 * j1 * c("Xc", hi, "Pc", i),
            j1**2 * (c("Xc", hi, "Xc", lo) + c("Xc", hi, "Xc", hi)),
        ]
    else:
        raise ValueError("quadrature must be 'X' or 'P'")
    return float(sum(terms))


def to_db(ratio: np.ndarray | float) -> np.ndarray:
    return 10.0 * np.log10(np.asarray(ratio, dtype=float))


@dataclass
class NullifierReport:
    """Shot-normalized nullifier and EPR variances in dB for interior modes."""

    mode_numbers: np.ndarray
    centers_hz: np.ndarray
    epr_x_db: np.ndarray
    epr_p_db: np.ndarray
    null_x_db: np.ndarray
    null_p_db: np.ndarray
    method: str = "matrix"
    run_count: int = 0
    window_s: float = 0.0
    edge_flags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self) -> None:
        for name in ("epr_x_db", "epr_p_db", "null_x_db", "null_p_db"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")

    def rows(self) -> list[dict]:
        return [
            {
                "mode": int(self.mode_numbers[i]),
                "mode_center_hz": float(self.centers_hz[i]),
                "epr_x_db": float(self.epr_x_db[i]),
                "epr_p_db": float(self.epr_p_db[i]),
                "null_x_db": float(self.null_x_db[i]),
                "null_p_db": float(self.null_p_db[i]),
                "method": self.method,
            }
            for i in range(len(self.mode_numbers))
        ]

    def to_csv(self, path: str | Path | None = None, header: bool = True) -> str:
        buf = io.StringIO()
        fields = ["mode", "mode_center_hz", "epr_x_db", "epr_p_db", "null_x_db", "null_p_db", "method"]
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        if header:
            w.writeheader()
        for r in self.rows():
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def nullifier_report(
    sigma: np.ndarray,
    sigma_shot: np.ndarray,
    N: NullifierMatrix,
    layout: ModeLayout | None = None,
    method: str = "matrix",
    run_count: int = 0,
    window_s: float = 0.0,
) -> NullifierReport:
    """Per-mode ``10 log10(var(N, Sigma) / var(N, Sigma_shot))`` for interior modes.

    EPR values use the untransformed unit-weight rows on the same ``Sigma``.
    Rows whose support reaches into a guard bin are flagged in ``edge_flags``.
    """
    layout = N.layout if layout is None else layout
    n = layout.n_bins
    if sigma.shape != (4 * n, 4 * n) or sigma_shot.shape != sigma.shape:
        raise ValueError("covariance dimensions do not match the layout")
    epr = epr_nullifier_matrix(layout)
    idx = layout.interior
    sel = np.concatenate([idx, n + idx])

    def ratio(rows: np.ndarray) -> np.ndarray:
        num = nullifier_variances(rows, sigma)
        den = nullifier_variances(rows, sigma_shot)
        if np.any(den <= 0):
            raise ValueError("nonpositive shot variance")
        return num / den

    null = ratio(N.rows[sel])
    ep = ratio(epr.rows[sel])
    m = idx.size
    guard = np.ones(n, dtype=bool)
    guard[idx] = False
    gcols = np.concatenate([guard] * 4)
    touches = np.abs(N.rows[sel][:, gcols]).max(axis=1, initial=0.0) > 0
    flags = touches[:m] | touches[m:]
    return NullifierReport(
        mode_numbers=idx - layout.guard_modes + 1,
        centers_hz=layout.centers[idx],
        epr_x_db=to_db(ep[:m]),
        epr_p_db=to_db(ep[m:]),
        null_x_db=to_db(null[:m]),
        null_p_db=to_db(null[m:]),
        method=method,
        run_count=run_count,
        window_s=window_s,
        edge_flags=flags,
    )


@dataclass(frozen=True)
class ErrorMatrix:
    """``U = 2 cov[P - V X]`` and its diagonal."""

    U: np.ndarray
    error_vector: np.ndarray


def error_matrix(sigma: np.ndarray, V: np.ndarray) -> ErrorMatrix:
    """Error matrix of the approximate nullifiers ``P - V X``.

    Parameters
    ----------
    sigma : numpy.ndarray
        Absolute-unit covariance, X block first.
    V : numpy.ndarray
        Symmetric adjacency matrix over the X coordinates (half of ``sigma``).
    """
    d = sigma.shape[0] // 2
    V = np.asarray(V, dtype=float)
    if sigma.shape != (2 * d, 2 * d) or V.shape != (d, d):
        raise ValueError(f"dimension mismatch: Sigma {sigma.shape}, V {V.shape}")
    if not np.allclose(V, V.T, atol=1e-10 * max(1.0, float(np.abs(V).max(initial=0.0)))):
        raise ValueError("V must be symmetric")
    sxx, sxp = sigma[:d, :d], sigma[:d, d:]
    spx, spp = sigma[d:, :d], sigma[d:, d:]
    U = 2.0 * (spp - V @ sxp - spx @ V.T + V @ sxx @ V.T)
    U = 0.5 * (U + U.T)
    return ErrorMatrix(U, np.diag(U).copy())
