"""End-to-end workflows behind the command-line interface."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import dsp
from .experiment import ConfigError, ExperimentConfig
from .gaussian import DriveSpec, ModeLayout, eom_symplectic, shot_normalized, symplectic_defect, theory_covariance
from .graph import (
    GluSpec,
    StructureReport,
    covariance_adjacency,
    expected_hypercube,
    export_graph,
    extract_v_u,
    glu_transform,
    offlattice_weight,
    projected_adjacency,
    verify_structure,
)
from .io import read_matrix, write_matrix_bin, write_matrix_csv
from .nullifier import (
    NullifierReport,
    epr_nullifier_matrix,
    error_matrix,
    nullifier_report,
    transform_nullifiers,
)
from .synth import elec_traces, load_traces, save_traces, shot_traces, synth_traces

QUADS = ("XX", "PP", "XP")
ROLE_CODES = {"signal-on": 0, "signal-off": 1, "shot": 2, "elec": 3}


def thread_count() -> int:
    raw = os.environ.get("CVL_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"CVL_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(8, os.cpu_count() or 1))


def _map(fn: Callable, items: Iterable, threads: int | None = None) -> list:
    items = list(items)
    threads = thread_count() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def derive_seed(seed: int, role: str, quad: str, run: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(ROLE_CODES[role], QUADS.index(quad), int(run)))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def plan_files(cfg: ExperimentConfig) -> list[dict]:
    """Every trace file a simulation writes, in a fixed order."""
    runs = cfg.runs
    plan = []
    has_drive = bool(cfg.drive.tones)
    for r in range(runs["signal"]):
        for q in QUADS:
            plan.append({"role": "signal", "eom": "on" if has_drive else "off", "label": q, "run": r, "key": "signal-on"})
    for r in range(runs["eom_off"]):
        for q in runs["eom_off_quads"]:
            plan.append({"role": "signal", "eom": "off", "label": q, "run": r, "key": "signal-off"})
    for r in range(runs["shot"]):
        plan.append({"role": "shot", "eom": "off", "label": "XX", "run": r, "key": "shot"})
    for r in range(runs["elec"]):
        plan.append({"role": "elec", "eom": "off", "label": "XX", "run": r, "key": "elec"})
    for p in plan:
        p["seed"] = derive_seed(cfg.seed, p["key"], p["label"], p["run"])
        kind = f"{p['role']}_{p['label']}_{p['eom']}" if p["role"] == "signal" else p["role"]
        p["path"] = f"traces/{kind}_r{p['run']:03d}.cvlt"
        del p["key"]
    return plan


def simulate(cfg: ExperimentConfig, out_dir: str | Path, threads: int | None = None) -> dict:
    """Write trace files, the config snapshot and a manifest into ``out_dir``."""
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    plan = plan_files(cfg)

    def make(entry: dict) -> dict:
        sc = cfg.synth_config(entry["label"], entry["seed"], eom_on=entry["eom"] == "on")
        if entry["role"] == "signal":
            ts = synth_traces(sc)
        elif entry["role"] == "shot":
            ts = shot_traces(sc)
        else:
            ts = elec_traces(sc)
        path = out / entry["path"]
        save_traces(ts, path)
        return {**entry, "sha256": _sha256(path), "clip_fraction": ts.metadata["digitizer"]["clip_fraction"]}

    files = _map(make, plan, threads)
    manifest = {"version": 1, "config": "config.json", "name": cfg.name, "files": files}
    _write_json(out / "manifest.json", manifest)
    return manifest


def load_manifest(path: str | Path) -> tuple[dict, ExperimentConfig, Path]:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    try:
        manifest = json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {p}: {exc}") from None
    base = p.parent
    cfg = ExperimentConfig.load(base / manifest.get("config", "config.json"))
    return manifest, cfg, base


def _bin_run(entry: dict, base: Path, cfg: ExperimentConfig, delay: float) -> dsp.RunData:
    ts = load_traces(base / entry["path"])
    drive = cfg.drive if entry["eom"] == "on" else None
    role = entry["role"]
    return dsp.analyze_traces(
        ts.probe,
        ts.conjugate,
        ts.dt,
        cfg.layout,
        entry["label"],
        role=role,
        drive=drive,
        delay_s=delay if role == "signal" else 0.0,
    )


def _estimate_delay(entries: list[dict], base: Path, cfg: ExperimentConfig) -> float | None:
    cands = [e for e in entries if e["role"] == "signal" and e["label"] in ("XX", "PP")]
    cands.sort(key=lambda e: (e["eom"] != "off", e["run"], e["label"]))
    found = []
    for e in cands[:3]:
        ts = load_traces(base / e["path"])
        try:
            found.append(
                dsp.estimate_delay(ts.probe, ts.conjugate, ts.dt, cfg.layout, tuple(cfg.analysis["delay_search_s"]))
            )
        except dsp.DelayNotFound:
            continue
    return float(np.median(found)) if found else None


def nullifier_rows(cfg: ExperimentConfig):
    """EPR rows carried through the analytic EOM matrix of the configured drive."""
    drive = cfg.analysis_drive()
    epr = epr_nullifier_matrix(cfg.layout)
    if not drive.tones:
        return epr
    return transform_nullifiers(epr, eom_symplectic(cfg.layout, drive, model=cfg.analysis["eom_model"]))


def lockin_estimate(
    est: dsp.CovarianceEstimate, runs: list[dsp.RunData], drive: DriveSpec
) -> tuple[dsp.CovarianceEstimate, list[dict]]:
    """Replace drive-offset XpPc entries by phase-compensated lock-in values.

    For each tone the lock-in phasors of all pairs at that offset are summed
    to estimate the drive phase; each pair's covariance is then projected
    onto that phase.
    """
    xp_runs = [r for r in runs if r.label == "XP"]
    n = est.layout.n_bins
    c = np.mean([dsp.complex_covariance(r.probe, r.conjugate) for r in xp_runs], axis=0)
    xppc = est.block("Xp", "Pc").copy()
    table = []
    for tone in drive.tones:
        k = est.layout.offset_of(tone.frequency)
        if k >= n:
            continue
        i = np.arange(n - k)
        upper = np.conj(c[i, i + k])
        lower = c[i + k, i]
        total = upper.sum() + lower.sum()
        # The EOM coupling is negative, so an in-phase drive puts the phasors at pi.
        est_phase = float(np.angle(-total))
        d = (est_phase - tone.phase + math.pi / 2) % math.pi - math.pi / 2
        phase = tone.phase + d
        rot = np.exp(-1j * phase)
        xppc[i, i + k] = (upper * rot).real
        xppc[i + k, i] = (lower * rot).real
        table.append(
            {
                "tone_hz": tone.frequency,
                "offset": k,
                "phase_rad": phase,
                "nominal_phase_rad": tone.phase,
                "mean_amplitude": float(np.mean(np.abs(np.concatenate([upper, lower])))),
            }
        )
    sig = est.matrix.copy()
    sig[0:n, 3 * n : 4 * n] = xppc
    sig[3 * n : 4 * n, 0:n] = xppc.T
    sig[n : 2 * n, 2 * n : 3 * n] = xppc.T
    sig[2 * n : 3 * n, n : 2 * n] = xppc
    out = dsp.CovarianceEstimate(
        matrix=sig,
        mask=est.mask.copy(),
        run_count=est.run_count,
        normalization=est.normalization,
        layout=est.layout,
        stderr=est.stderr,
        runs_per_label=dict(est.runs_per_label),
        window_s=est.window_s,
    )
    return out, table


def _csv(path: Path, fields: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})


def analyze(manifest_path: str | Path, out_dir: str | Path | None = None, method: str | None = None,
            threads: int | None = None) -> dict:
    """Bin, assemble, normalize and report every run listed in a manifest."""
    manifest, cfg, base = load_manifest(manifest_path)
    out = Path(out_dir) if out_dir is not None else base / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    method = method or cfg.analysis["method"]
    entries = manifest["files"]
    layout = cfg.layout

    if cfg.analysis["delay"] == "auto":
        delay = _estimate_delay(entries, base, cfg)
        delay_source = "estimated" if delay is not None else "none-found"
        delay = delay if delay is not None else 0.0
    else:
        delay, delay_source = float(cfg.analysis["delay"]), "configured"

    runs = _map(lambda e: (e, _bin_run(e, base, cfg, delay)), entries, threads)
    on = [r for e, r in runs if e["role"] == "signal" and e["eom"] == "on"]
    off = [r for e, r in runs if e["role"] == "signal" and e["eom"] == "off"]
    shot = [r for e, r in runs if e["role"] == "shot"]
    elec = [r for e, r in runs if e["role"] == "elec"]
    if not shot:
        raise ConfigError("manifest has no shot-noise runs")
    shot_est = dsp.assemble_covariance(shot, require_complete=False)
    elec_est = dsp.assemble_covariance(elec, require_complete=False) if elec else None
    mode = cfg.analysis["normalization"]
    if mode == "auto":
        mode = "elec-subtract" if elec_est is not None else "shot-ratio"
    if mode == "elec-subtract" and elec_est is None:
        raise ConfigError("elec-subtract normalization needs electronic-noise runs")

    summary: dict = {
        "name": cfg.name,
        "delay_s": delay,
        "delay_source": delay_source,
        "normalization": mode,
        "runs": {"eom_on": len(on), "eom_off": len(off), "shot": len(shot), "elec": len(elec)},
        "outputs": [],
    }

    def spectra(rs: list[dsp.RunData]) -> dict[str, np.ndarray]:
        outd = {}
        for lab in ("XX", "PP"):
            sel = [r for r in rs if r.label == lab]
            if sel:
                outd[lab] = dsp.squeezing_spectrum(sel, shot_est, elec_est, mode)[layout.interior]
        return outd

    centers = layout.centers[layout.interior]
    modes = layout.interior - layout.guard_modes + 1
    if not on and not off:
        # Shot-only manifest: the shot runs measured against themselves.
        sp = dsp.squeezing_spectrum(shot, shot_est, elec_est, mode)[layout.interior]
        rows = [{"mode": int(m), "center_hz": float(c), "shot_db": float(v)} for m, c, v in zip(modes, centers, sp)]
        _csv(out / "squeezing_spectrum.csv", ["mode", "center_hz", "shot_db"], rows)
        summary["outputs"].append("squeezing_spectrum.csv")
        _write_json(out / "analysis.json", summary)
        return summary

    sp_on, sp_off = spectra(on), spectra(off)
    fields = ["mode", "center_hz"]
    cols = {}
    for tag, sp in (("eom_off", sp_off), ("eom_on", sp_on)):
        for lab, q in (("XX", "x"), ("PP", "p")):
            if lab in sp:
                cols[f"{tag}_{q}_db"] = sp[lab]
    fields += list(cols)
    rows = [
        {"mode": int(m), "center_hz": float(c), **{k: float(v[j]) for k, v in cols.items()}}
        for j, (m, c) in enumerate(zip(modes, centers))
    ]
    _csv(out / "squeezing_spectrum.csv", fields, rows)
    summary["outputs"].append("squeezing_spectrum.csv")

    reports: list[NullifierReport] = []
    if on:
        est = dsp.assemble_covariance(on)
        norm = dsp.normalize(est, shot_est, mode, elec_est)
        ident = np.eye(norm.matrix.shape[0])
        N = nullifier_rows(cfg)
        extra = {"run_count": est.run_count, "window_s": est.window_s}
        write_matrix_bin(out / "covariance.cvl", norm.matrix, layout, "shot-normalized", extra)
        write_matrix_csv(out / "covariance.csv", norm.matrix, layout, "shot-normalized", extra)
        summary["outputs"] += ["covariance.cvl", "covariance.csv"]
        if method in ("matrix", "both"):
            reports.append(nullifier_report(norm.matrix, ident, N, layout, "matrix", est.run_count, est.window_s))
        if method in ("lockin", "both") and cfg.drive.tones:
            lk, table = lockin_estimate(est, on, cfg.drive)
            lk_norm = dsp.normalize(lk, shot_est, mode, elec_est)
            reports.append(nullifier_report(lk_norm.matrix, ident, N, layout, "lockin", est.run_count, est.window_s))
            _csv(out / "lockin_phases.csv", ["tone_hz", "offset", "phase_rad", "nominal_phase_rad", "mean_amplitude"], table)
            summary["outputs"].append("lockin_phases.csv")
            summary["lockin_phases_rad"] = [t["phase_rad"] for t in table]
        graph = covariance_adjacency(norm.matrix, layout, cfg.analysis["threshold"])
        export_graph(graph, "json", out / "graph.json")
        summary["outputs"].append("graph.json")
        summary["edge_count"] = len(graph.edges)
    if off:
        try:
            est_off = dsp.assemble_covariance(off)
        except dsp.MissingSectorError:
            est_off = dsp.assemble_covariance(off, require_complete=False)
        norm_off = dsp.normalize(est_off, shot_est, mode, elec_est)
        write_matrix_bin(out / "covariance_eom_off.cvl", norm_off.matrix, layout, "shot-normalized")
        summary["outputs"].append("covariance_eom_off.cvl")

    if reports:
        text = "".join(r.to_csv(header=(i == 0)) for i, r in enumerate(reports))
        (out / "nullifiers.csv").write_text(text)
        summary["outputs"].append("nullifiers.csv")
        _fig_curves(out / "fig_curves.csv", modes, centers, sp_off, sp_on, reports)
        summary["outputs"].append("fig_curves.csv")
        summary["nullifier_median_db"] = {
            r.method: {"x": float(np.median(r.null_x_db)), "p": float(np.median(r.null_p_db))} for r in reports
        }
    summary["outputs"].sort()
    _write_json(out / "analysis.json", summary)
    return summary


def _fig_curves(path: Path, modes, centers, sp_off, sp_on, reports: list[NullifierReport]) -> None:
    """Red (EOM off), blue (EOM on), gold (matrix nullifier) and circle (lock-in nullifier) curves."""
    by = {r.method: r for r in reports}
    nan = np.full(len(modes), np.nan)
    cols = {
        "red_x_db": sp_off.get("XX", nan),
        "red_p_db": sp_off.get("PP", nan),
        "blue_x_db": sp_on.get("XX", nan),
        "blue_p_db": sp_on.get("PP", nan),
        "gold_x_db": by["matrix"].null_x_db if "matrix" in by else nan,
        "gold_p_db": by["matrix"].null_p_db if "matrix" in by else nan,
        "circle_x_db": by["lockin"].null_x_db if "lockin" in by else nan,
        "circle_p_db": by["lockin"].null_p_db if "lockin" in by else nan,
    }
    rows = [
        {"mode": int(m), "center_hz": float(c), **{k: float(v[j]) for k, v in cols.items()}}
        for j, (m, c) in enumerate(zip(modes, centers))
    ]
    _csv(path, ["mode", "center_hz", *cols], rows)


def theory_state(cfg: ExperimentConfig) -> np.ndarray:
    """Analytic absolute-unit covariance of the configured state."""
    return theory_covariance(cfg.layout, cfg.profile(), cfg.analysis_drive(), model=cfg.analysis["eom_model"])


def error_summary(sigma: np.ndarray, layout: ModeLayout, drive: DriveSpec, glu: GluSpec = GluSpec()) -> dict:
    """Error vector of the GLU-rotated state against its intended hypercube.

    ``V`` comes from the graphical-calculus extraction and is projected
    onto the lattice support (same-bin pairs plus tone offsets) before
    ``U = 2 cov[P - V X]`` is formed.
    """
    g = glu_transform(sigma, layout, glu)
    vu = extract_v_u(g)
    offsets = drive.offsets(layout) if drive.tones else []
    Vp = projected_adjacency(vu.V, layout, offsets)
    em = error_matrix(g, Vp)
    n = layout.n_bins
    idx = np.concatenate([layout.interior, n + layout.interior])
    ev = em.error_vector[idx]
    off = offlattice_weight(vu.V, layout, offsets)[idx]
    return {
        "error_vector": ev,
        "error_vector_max": float(ev.max()),
        "error_vector_mean": float(ev.mean()),
        "offlattice_weight_max": float(off.max()),
        "vu_residual": vu.residual,
        "V": vu.V,
        "U": vu.U,
    }


def theory(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    """Analytic covariance, nullifier report, V/U and error vector."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    layout = cfg.layout
    drive = cfg.analysis_drive()
    sigma = theory_state(cfg)
    norm = shot_normalized(sigma)
    write_matrix_bin(out / "theory_covariance.cvl", norm, layout, "shot-normalized")
    write_matrix_csv(out / "theory_covariance.csv", norm, layout, "shot-normalized")
    N = nullifier_rows(cfg)
    rep = nullifier_report(sigma, 0.5 * np.eye(sigma.shape[0]), N, layout, "matrix")
    rep.to_csv(out / "nullifiers.csv")
    err = error_summary(sigma, layout, drive)
    np.savetxt(out / "V.csv", err["V"], delimiter=",", fmt="%.12g")
    np.savetxt(out / "U.csv", err["U"], delimiter=",", fmt="%.12g")
    np.savetxt(out / "error_vector.csv", err["error_vector"], delimiter=",", fmt="%.12g")
    defect = symplectic_defect(eom_symplectic(layout, drive, model=cfg.analysis["eom_model"])) if drive.tones else 0.0
    graph = covariance_adjacency(norm, layout, cfg.analysis["threshold"])
    export_graph(graph, "json", out / "graph.json")
    summary = {
        "name": cfg.name,
        "eom_model": cfg.analysis["eom_model"],
        "eom_defect": defect,
        "edge_offsets": sorted(graph.offsets()),
        "error_vector_max": err["error_vector_max"],
        "error_vector_mean": err["error_vector_mean"],
        "offlattice_weight_max": err["offlattice_weight_max"],
        "vu_residual": err["vu_residual"],
        "nullifier_median_db": {"x": float(np.median(rep.null_x_db)), "p": float(np.median(rep.null_p_db))},
        "epr_median_db": {"x": float(np.median(rep.epr_x_db)), "p": float(np.median(rep.epr_p_db))},
    }
    _write_json(out / "theory.json", summary)
    return summary


def verify(cov_path: str | Path, cfg: ExperimentConfig, threshold: float | None = None,
           out_dir: str | Path | None = None) -> StructureReport:
    """Structure check of a shot-normalized covariance file against the configured hypercube."""
    try:
        matrix, header = read_matrix(cov_path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read covariance {cov_path}: {exc}") from None
    layout = cfg.layout
    if matrix.shape != (layout.dim, layout.dim):
        raise ConfigError(f"covariance is {matrix.shape}, config layout needs {(layout.dim, layout.dim)}")
    if header.get("normalization") == "absolute":
        matrix = shot_normalized(matrix)
    thr = cfg.analysis["threshold"] if threshold is None else threshold
    measured = covariance_adjacency(matrix, layout, thr)
    expected = expected_hypercube(layout, cfg.drive)
    report = verify_structure(measured, expected, thr, cfg.analysis["max_extraneous_fraction"])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "structure.json", report.to_dict())
        export_graph(measured, "json", out / "graph.json")
        export_graph(measured, "dot", out / "graph.dot")
    return report
