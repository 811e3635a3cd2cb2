"""Graph structure of EOM-generated cluster states.

Nodes are frequency bins, each standing for the probe/conjugate pair of
that bin.  Edge weights come from the cross-beam XP covariances
(``XpPc`` and ``XcPp`` sectors) between distinct bins.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gaussian import DriveSpec, ModeLayout, apply

SOURCES = ("covariance-weight", "graphical-calculus-V", "expected")
EDGE_KINDS = ("lattice", "traceback", "extraneous")


@dataclass(frozen=True)
class Edge:
    a: int
    b: int
    weight: float
    kind: str = "lattice"

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ValueError("self-edges are not allowed")
        if not math.isfinite(self.weight):
            raise ValueError("edge weight must be finite")
        if self.a > self.b:
            a, b = self.b, self.a
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)

    @property
    def key(self) -> tuple[int, int]:
        return (self.a, self.b)


@dataclass
class AdjacencyGraph:
    """Undirected weighted graph over bin indices."""

    nodes: list[int]
    centers_hz: list[float]
    edges: list[Edge] = field(default_factory=list)
    source: str = "covariance-weight"
    interior: list[int] | None = None

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}")
        keys = [e.key for e in self.edges]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate edges")

    def edge_map(self) -> dict[tuple[int, int], Edge]:
        return {e.key: e for e in self.edges}

    def offsets(self) -> set[int]:
        return {e.b - e.a for e in self.edges}

    def degree(self, node: int) -> int:
        return sum(1 for e in self.edges if node in (e.a, e.b))


@dataclass(frozen=True)
class HypercubeSpec:
    """Lattice folded onto the frequency axis by tone offsets ``k_1 < ... < k_d``."""

    offsets: tuple[int, ...]

    def __post_init__(self) -> None:
        off = tuple(int(k) for k in self.offsets)
        object.__setattr__(self, "offsets", off)
        if not 1 <= len(off) <= 4:
            raise ValueError("dimension must be between 1 and 4")
        if any(b <= a for a, b in zip(off, off[1:])) or off[0] < 1:
            raise ValueError("offsets must be positive and strictly increasing")

    @property
    def dimension(self) -> int:
        return len(self.offsets)

    def radices(self) -> list[int | None]:
        """Side length of each folded axis; ``None`` for the unbounded last axis
        or for offsets that do not divide the next one (no folding)."""
        out: list[int | None] = []
        for a, b in zip(self.offsets, self.offsets[1:]):
            out.append(b // a if b % a == 0 else None)
        out.append(None)
        return out

    def is_traceback(self, position: int, axis: int) -> bool:
        """Whether the step ``position -> position + k_axis`` wraps a folded axis."""
        radix = self.radices()[axis]
        if radix is None:
            return False
        return (position // self.offsets[axis]) % radix == radix - 1


@dataclass(frozen=True)
class GluSpec:
    """Single-mode rotations that bring a two-mode-squeezed graph to cluster form."""

    rotation: float = -math.pi / 2
    probe_parity: str = "even"
    conjugate_parity: str = "odd"
    origin: int = 1

    def __post_init__(self) -> None:
        for p in (self.probe_parity, self.conjugate_parity):
            if p not in ("even", "odd", "none", "all"):
                raise ValueError(f"invalid parity {p!r}")


def _selected(parity: str, number: int) -> bool:
    if parity == "all":
        return True
    if parity == "none":
        return False
    return (number % 2 == 0) == (parity == "even")


def glu_symplectic(layout: ModeLayout, spec: GluSpec = GluSpec()) -> np.ndarray:
    """Rotation ``(X, P) -> (cos t X + sin t P, -sin t X + cos t P)`` on selected modes.

    Bin ``i`` has mode number ``i + spec.origin``; probe modes of
    ``spec.probe_parity`` and conjugate modes of ``spec.conjugate_parity``
    are rotated.
    """
    n = layout.n_bins
    S = np.eye(4 * n)
    c, s = math.cos(spec.rotation), math.sin(spec.rotation)
    for i in range(n):
        number = i + spec.origin
        for beam, parity in ((0, spec.probe_parity), (1, spec.conjugate_parity)):
            if _selected(parity, number):
                x = beam * n + i
                p = 2 * n + x
                S[x, x], S[x, p], S[p, x], S[p, p] = c, s, -s, c
    return S


def glu_transform(sigma: np.ndarray, layout: ModeLayout, spec: GluSpec = GluSpec()) -> np.ndarray:
    """``S_glu Sigma S_glu^T``."""
    return apply(glu_symplectic(layout, spec), sigma)


@dataclass(frozen=True)
class VUResult:
    V: np.ndarray
    U: np.ndarray
    residual: float
    approximate: bool = False


def extract_v_u(sigma: np.ndarray, approximate: bool = False) -> VUResult:
    """Adjacency ``V = Sxx^-1 Sxp`` and error matrix ``U = (2 Sxx)^-1``.

    These are the graphical-calculus identities for a pure Gaussian state
    written as ``Z = V + iU``.  ``residual`` is the largest entry of
    ``Spp - (U + V U^-1 V) / 2``, which vanishes for a pure state.
    Set ``approximate`` when ``sigma`` has unmeasured blocks zeroed.
    """
    sigma = np.asarray(sigma, dtype=float)
    h = sigma.shape[0] // 2
    if sigma.shape != (2 * h, 2 * h):
        raise ValueError("sigma must be square with even dimension")
    sxx, sxp, spp = sigma[:h, :h], sigma[:h, h:], sigma[h:, h:]
    try:
        V = np.linalg.solve(sxx, sxp)
        U = np.linalg.inv(2.0 * sxx)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("Sigma_XX is singular") from exc
    V = 0.5 * (V + V.T)
    U = 0.5 * (U + U.T)
    recon = 0.5 * (U + V @ np.linalg.solve(U, V))
    residual = float(np.max(np.abs(spp - recon))) if h else 0.0
    return VUResult(V, U, residual, approximate)


def lattice_support(layout: ModeLayout, offsets: list[int]) -> np.ndarray:
    """Boolean ``2n x 2n`` mask over X coordinates: same-bin probe/conjugate
    pairs plus every pair of bins separated by one of ``offsets``."""
    n = layout.n_bins
    i = np.arange(n)
    d = np.abs(i[:, None] - i[None, :])
    base = d == 0
    for k in offsets:
        base |= d == k
    return np.block([[base, base], [base, base]])


def projected_adjacency(V: np.ndarray, layout: ModeLayout, offsets: list[int]) -> np.ndarray:
    """Keep only the entries of ``V`` on the intended hypercube support."""
    return np.where(lattice_support(layout, offsets), V, 0.0)


def offlattice_weight(V: np.ndarray, layout: ModeLayout, offsets: list[int]) -> np.ndarray:
    """Per-row absolute ``V`` weight falling outside the hypercube support."""
    return np.abs(np.where(lattice_support(layout, offsets), 0.0, V)).sum(axis=1)


def offdiag_mass(U: np.ndarray, layout: ModeLayout | None = None, cross_frequency: bool = True) -> float:
    """Frobenius norm of the off-diagonal part of ``U`` over the X coordinates.

    With ``cross_frequency`` the same-bin probe/conjugate entries are also
    dropped, leaving only couplings between different frequencies.
    """
    U = np.asarray(U, dtype=float)
    h = U.shape[0] // 2
    M = U.copy()
    np.fill_diagonal(M, 0.0)
    if cross_frequency:
        i = np.arange(h)
        M[i, h + i] = 0.0
        M[h + i, i] = 0.0
    return float(np.linalg.norm(M))


def _bin_nodes(layout: ModeLayout) -> tuple[list[int], list[float], list[int]]:
    return (
        list(range(layout.n_bins)),
        [float(c) for c in layout.centers],
        [int(i) for i in layout.interior],
    )


def covariance_adjacency(
    sigma_norm: np.ndarray,
    layout: ModeLayout,
    threshold: float = 0.05,
) -> AdjacencyGraph:
    """Edges between distinct bins from shot-normalized cross-beam XP covariances.

    The weight of ``(i, j)`` is the mean of ``XpPc[i, j]``, ``XpPc[j, i]``,
    ``XcPp[i, j]`` and ``XcPp[j, i]``; edges with ``|weight| < threshold``
    are dropped.  Same-bin probe/conjugate correlations are not edges.
    """
    n = layout.n_bins
    if sigma_norm.shape != (4 * n, 4 * n):
        raise ValueError("covariance does not match layout")
    xppc = sigma_norm[0:n, 3 * n : 4 * n]
    xcpp = sigma_norm[n : 2 * n, 2 * n : 3 * n]
    w = 0.25 * (xppc + xppc.T + xcpp + xcpp.T)
    iu, ju = np.triu_indices(n, k=1)
    vals = w[iu, ju]
    keep = np.abs(vals) >= threshold
    edges = [Edge(int(a), int(b), float(v), "lattice") for a, b, v in zip(iu[keep], ju[keep], vals[keep])]
    nodes, centers, interior = _bin_nodes(layout)
    return AdjacencyGraph(nodes, centers, edges, "covariance-weight", interior)


def expected_hypercube(layout: ModeLayout, drive: DriveSpec, weight: float = 1.0) -> AdjacencyGraph:
    """Intended lattice: bin ``i`` linked to ``i +- k_j`` for every tone offset.

    Edges that wrap a folded lattice axis are tagged ``traceback``.  Lattice
    coordinates are counted from the first interior bin.
    """
    offsets = drive.offsets(layout)
    spec = HypercubeSpec(tuple(offsets))
    n = layout.n_bins
    g = layout.guard_modes
    edges = []
    for axis, k in enumerate(spec.offsets):
        for i in range(n - k):
            kind = "traceback" if spec.is_traceback(i - g, axis) else "lattice"
            edges.append(Edge(i, i + k, weight, kind))
    nodes, centers, interior = _bin_nodes(layout)
    return AdjacencyGraph(nodes, centers, edges, "expected", interior)


@dataclass
class StructureReport:
    matched: list[Edge]
    missing: list[Edge]
    extraneous: list[Edge]
    traceback: list[Edge]
    lattice_edge_count: int
    max_extraneous_fraction: float
    threshold: float

    @property
    def extraneous_fraction(self) -> float:
        return len(self.extraneous) / max(self.lattice_edge_count, 1)

    @property
    def passed(self) -> bool:
        return not self.missing and self.extraneous_fraction < self.max_extraneous_fraction

    def to_dict(self) -> dict:
        def ed(es: list[Edge]) -> list[dict]:
            return [{"a": e.a, "b": e.b, "weight": e.weight, "kind": e.kind} for e in es]

        return {
            "passed": self.passed,
            "threshold": self.threshold,
            "lattice_edge_count": self.lattice_edge_count,
            "extraneous_fraction": self.extraneous_fraction,
            "max_extraneous_fraction": self.max_extraneous_fraction,
            "matched": ed(self.matched),
            "missing": ed(self.missing),
            "extraneous": ed(self.extraneous),
            "traceback": ed(self.traceback),
        }


def verify_structure(
    measured: AdjacencyGraph,
    expected: AdjacencyGraph,
    threshold: float = 0.05,
    max_extraneous_fraction: float = 0.05,
) -> StructureReport:
    """Compare measured edges with the expected lattice on interior bins.

    Passes when every expected interior edge is present with
    ``|weight| >= threshold`` and the extraneous interior edges number fewer
    than ``max_extraneous_fraction`` of the expected interior edges.
    Traceback edges count as expected, and are also listed separately.
    """
    if list(measured.nodes) != list(expected.nodes):
        raise ValueError("measured and expected graphs have different node sets")
    interior = set(expected.interior if expected.interior is not None else expected.nodes)

    def inside(e: Edge) -> bool:
        return e.a in interior and e.b in interior

    meas = {e.key: e for e in measured.edges if abs(e.weight) >= threshold and inside(e)}
    exp = {e.key: e for e in expected.edges if inside(e)}
    matched, missing, traceback = [], [], []
    for key, e in exp.items():
        if key in meas:
            m = Edge(e.a, e.b, meas[key].weight, e.kind)
            matched.append(m)
            if e.kind == "traceback":
                traceback.append(m)
        else:
            missing.append(e)
    extraneous = [Edge(e.a, e.b, e.weight, "extraneous") for k, e in meas.items() if k not in exp]
    return StructureReport(
        matched=matched,
        missing=missing,
        extraneous=extraneous,
        traceback=traceback,
        lattice_edge_count=len(exp),
        max_extraneous_fraction=max_extraneous_fraction,
        threshold=threshold,
    )


def graph_to_dict(g: AdjacencyGraph) -> dict:
    return {
        "source": g.source,
        "nodes": [{"index": int(i), "center_hz": float(c)} for i, c in zip(g.nodes, g.centers_hz)],
        "interior": None if g.interior is None else [int(i) for i in g.interior],
        "edges": [{"a": e.a, "b": e.b, "weight": float(e.weight), "kind": e.kind} for e in g.edges],
    }


def graph_from_dict(d: dict) -> AdjacencyGraph:
    return AdjacencyGraph(
        nodes=[int(n["index"]) for n in d["nodes"]],
        centers_hz=[float(n["center_hz"]) for n in d["nodes"]],
        edges=[Edge(int(e["a"]), int(e["b"]), float(e["weight"]), e.get("kind", "lattice")) for e in d["edges"]],
        source=d.get("source", "covariance-weight"),
        interior=d.get("interior"),
    )


def export_graph(g: AdjacencyGraph, fmt: str = "json", path: str | Path | None = None) -> str:
    """Serialize to JSON (lossless) or DOT (weights as edge labels)."""
    if fmt == "json":
        text = json.dumps(graph_to_dict(g), indent=1, sort_keys=True) + "\n"
    elif fmt == "dot":
        lines = ["graph cluster {"]
        for i, c in zip(g.nodes, g.centers_hz):
            lines.append(f'  n{i} [label="{i}\\n{c / 1e3:.6g} kHz"];')
        for e in g.edges:
            style = ' style="dashed"' if e.kind == "traceback" else ""
            lines.append(f'  n{e.a} -- n{e.b} [label="{e.weight:.4g}"{style}];')
        lines.append("}")
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError("format must be 'json' or 'dot'")
    if path is not None:
        Path(path).write_text(text)
    return text


def load_graph(path: str | Path) -> AdjacencyGraph:
    return graph_from_dict(json.loads(Path(path).read_text()))
