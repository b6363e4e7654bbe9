"""Binary field dumps, CSV monitors, JSON summaries and run manifests."""
from __future__ import annotations

import csv
import json
import platform
import struct
import sys
from pathlib import Path

import numpy as np

from .errors import FieldFormatError, GridMismatchError
from .geometry import Field, Grid, GridSpec, grid_from_spec

MAGIC = b"FDE1"
# magic, header length, then the JSON grid descriptor, time stamp and node count
_PREFIX = struct.Struct("<4sI")
_TRAILER = struct.Struct("<dQ")

TRAJECTORY_COLUMNS = ("t", "J", "R", "h10", "lm", "linf")
RESCALED_COLUMNS = ("s", "J", "R", "h10", "lm", "linf", "dissipation", "Jprime_hminus1")


def write_field(path, field: Field, time: float = 0.0) -> Path:
    """Write ``field`` as ``FDE1`` header plus little-endian float64 values."""
    path = Path(path)
    desc = json.dumps(field.grid.spec.to_dict(), sort_keys=True).encode()
    values = np.ascontiguousarray(field.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, len(desc)))
        fh.write(desc)
        fh.write(_TRAILER.pack(float(time), values.size))
        fh.write(values.tobytes())
    return path


def read_field_raw(path) -> tuple[GridSpec, float, np.ndarray]:
    """Parse a dump without building a grid."""
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise FieldFormatError("truncated file: missing header")
    magic, dlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise FieldFormatError(f"bad magic {magic!r}")
    off = _PREFIX.size
    if len(data) < off + dlen + _TRAILER.size:
        raise FieldFormatError("truncated file: incomplete header")
    try:
        spec = GridSpec.from_dict(json.loads(data[off:off + dlen].decode()))
    except (ValueError, KeyError) as exc:
        raise FieldFormatError(f"malformed grid descriptor: {exc}") from exc
    off += dlen
    time, count = _TRAILER.unpack_from(data, off)
    off += _TRAILER.size
    if len(data) != off + 8 * count:
        raise FieldFormatError(f"truncated file: expected {count} values")
    values = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(float)
    return spec, time, values


def read_field(path, grid: Grid | None = None) -> tuple[Field, float]:
    """Read a dump; with ``grid`` the stored descriptor must match it."""
    spec, time, values = read_field_raw(path)
    if grid is None:
        grid = grid_from_spec(spec)
    elif spec != grid.spec:
        raise GridMismatchError(f"stored grid {spec} does not match {grid.spec}")
    if values.size != grid.size:
        raise FieldFormatError(f"{values.size} values for a grid of {grid.size} nodes")
    return Field(grid, values), time


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(x)) for x in row])
    return path


def trajectory_rows(traj):
    for t, mon in zip(traj.times, traj.monitors):
        yield (float(t), *mon.row())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


def versions() -> dict:
    import scipy

    from . import __version__

    return {
        "fdelab": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


def write_manifest(out_dir, config: dict, wall_time: float, files: list[str]) -> Path:
    """Config echo, versions, wall time and the CSV column layouts."""
    return write_json(Path(out_dir) / "manifest.json", {
        "config": config,
        "versions": versions(),
        "wall_time_s": wall_time,
        "files": sorted(files),
        "csv_columns": {
            "trajectory": list(TRAJECTORY_COLUMNS),
            "rescaled": list(RESCALED_COLUMNS),
        },
    })


def write_profile(out_dir, name: str, result) -> list[str]:
    """Binary dump plus JSON sidecar for a profile result."""
    out_dir = Path(out_dir)
    write_field(out_dir / f"{name}.fde", result.phi)
    write_json(out_dir / f"{name}.json", result.summary())
    return [f"{name}.fde", f"{name}.json"]
