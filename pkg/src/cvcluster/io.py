"""Matrix file formats.

CSV: ``#`` header lines carrying the quadrature ordering, normalization and
layout, then one row per matrix row.  Binary: magic ``CVL1``, little-endian
``uint32`` rows, cols and header length, a JSON header, then row-major
``float64`` entries.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .gaussian import ORDERING, ModeLayout

MAGIC = b"CVL1"


def _header(layout: ModeLayout | None, normalization: str, extra: dict | None) -> dict:
    h = {"ordering": list(ORDERING), "normalization": normalization}
    if layout is not None:
        h["layout"] = layout.to_dict()
    if extra:
        h.update(extra)
    return h


def write_matrix_csv(
    path: str | Path,
    matrix: np.ndarray,
    layout: ModeLayout | None = None,
    normalization: str = "absolute",
    extra: dict | None = None,
) -> None:
    h = _header(layout, normalization, extra)
    lines = [f"# ordering: {','.join(h['ordering'])}", f"# normalization: {normalization}"]
    lines.append("# header: " + json.dumps(h, sort_keys=True))
    body = "\n".join(",".join(repr(float(v)) for v in row) for row in np.asarray(matrix, dtype=float))
    Path(path).write_text("\n".join(lines) + "\n" + body + "\n")


def read_matrix_csv(path: str | Path) -> tuple[np.ndarray, dict]:
    header: dict = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# header: "):
            header = json.loads(line[len("# header: ") :])
        elif line.startswith("#") or not line.strip():
            continue
        else:
            rows.append([float(v) for v in line.split(",")])
    return np.array(rows, dtype=float), header


def write_matrix_bin(
    path: str | Path,
    matrix: np.ndarray,
    layout: ModeLayout | None = None,
    normalization: str = "absolute",
    extra: dict | None = None,
) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise ValueError("matrix must be 2-D")
    blob = json.dumps(_header(layout, normalization, extra), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", m.shape[0], m.shape[1], len(blob)))
        fh.write(blob)
        fh.write(m.tobytes())


def read_matrix_bin(path: str | Path) -> tuple[np.ndarray, dict]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a CVL1 matrix file")
    rows, cols, hlen = struct.unpack_from("<III", data, 4)
    off = 16
    header = json.loads(data[off : off + hlen])
    off += hlen
    if len(data) != off + 8 * rows * cols:
        raise ValueError(f"{path}: truncated matrix payload")
    m = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols).astype(float)
    return m, header


def read_matrix(path: str | Path) -> tuple[np.ndarray, dict]:
    """Read either format, chosen by the file's magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    return read_matrix_bin(path) if head == MAGIC else read_matrix_csv(path)
