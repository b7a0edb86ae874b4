"""CSV field files and JSON reports with a provenance header.

Field CSVs have columns ``i0[,i1], x0[,x1], value`` in row-major node order,
17 significant digits, preceded by ``#`` comment lines carrying the artifact
version and the config hash.  Output is byte-deterministic.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .errors import NlfracError
from .grid import GridSpec

__all__ = [
    "OutputError",
    "header_lines",
    "write_field_csv",
    "read_field_csv",
    "write_table_csv",
    "write_json",
    "fmt",
]


class OutputError(NlfracError):
    """File could not be written or read (CLI exit code 3)."""


def fmt(x) -> str:
    return format(float(x), ".17g")


def header_lines(config_hash: str, extra: Optional[Mapping[str, object]] = None) -> list:
    lines = [f"# artifact_version: {__version__}", f"# config_sha256: {config_hash}"]
    for key in sorted(extra or {}):
        lines.append(f"# {key}: {extra[key]}")
    return lines


def _write(path: Path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def write_table_csv(path, columns: Sequence[str], rows: Iterable[Sequence], config_hash: str,
                    extra: Optional[Mapping[str, object]] = None) -> Path:
    """Generic table; floats are written with 17 significant digits."""
    buf = io.StringIO()
    buf.write("\n".join(header_lines(config_hash, extra)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return _write(path, buf.getvalue())


def write_field_csv(path, grid: GridSpec, u, config_hash: str,
                    extra: Optional[Mapping[str, object]] = None) -> Path:
    u = grid.check_field(u)
    d = grid.dim
    cols = [f"i{a}" for a in range(d)] + [f"x{a}" for a in range(d)] + ["value"]
    coords = grid.coords()
    rows = []
    for idx in np.ndindex(*grid.shape):
        rows.append(list(idx) + [fmt(c[idx]) for c in coords] + [fmt(u[idx])])
    return write_table_csv(path, cols, rows, config_hash, extra)


def read_field_csv(path, grid: GridSpec) -> np.ndarray:
    """Read a field written by :func:`write_field_csv` onto ``grid``."""
    try:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(lines)
    head = next(reader, None)
    d = grid.dim
    if head is None or len(head) != 2 * d + 1 or head[-1] != "value":
        raise OutputError(f"{path}: expected columns i*, x*, value for dim={d}")
    out = np.full(grid.shape, np.nan)
    for row in reader:
        idx = tuple(int(v) for v in row[:d])
        try:
            out[idx] = float(row[-1])
        except IndexError as exc:
            raise OutputError(f"{path}: node index {idx} outside the grid") from exc
    if np.isnan(out).any():
        raise OutputError(f"{path}: field does not cover every grid node")
    return out


def write_json(path, doc: Mapping, config_hash: str) -> Path:
    body = {"artifact_version": __version__, "config_sha256": config_hash}
    body.update(doc)
    text = json.dumps(_plain(body), sort_keys=True, indent=2, allow_nan=True) + "\n"
    return _write(path, text)


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj
