"""Artifact writers: long-format CSV, binary array snapshots and the run manifest.

Snapshot layout (little-endian): 16-byte magic, uint32 version, uint32
ndim, ndim x uint64 shape, then the row-major float64 payload.
"""
from __future__ import annotations

import csv
import hashlib
import json
import platform
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "SNAPSHOT_MAGIC",
    "SNAPSHOT_VERSION",
    "SnapshotError",
    "write_snapshot",
    "read_snapshot",
    "write_long_csv",
    "read_long_csv",
    "write_manifest",
    "file_digest",
]

SNAPSHOT_MAGIC = b"HYPERSTEP-SNAP\x00\x01"
SNAPSHOT_VERSION = 1


class SnapshotError(ValueError):
    """Malformed snapshot file."""


def write_snapshot(path, array) -> Path:
    path = Path(path)
    a = np.asarray(array, dtype="<f8", order="C")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<II", SNAPSHOT_VERSION, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(a.tobytes(order="C"))
    return path


def read_snapshot(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:16] != SNAPSHOT_MAGIC:
        raise SnapshotError("bad magic")
    version, ndim = struct.unpack_from("<II", data, 16)
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    shape = struct.unpack_from(f"<{ndim}Q", data, 24)
    off = 24 + 8 * ndim
    count = int(np.prod(shape)) if ndim else 1
    if len(data) - off != 8 * count:
        raise SnapshotError("payload size does not match shape")
    return np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_long_csv(path, columns, rows, units=None) -> Path:
    """Long-format CSV: one value per row.

    The first line is a comment naming the units of each column; floats are
    written with ``repr`` so reruns give byte-identical files.
    """
    path = Path(path)
    units = units or {}
    with open(path, "w", newline="") as fh:
        fh.write("# units: " + ", ".join(f"{c} [{units.get(c, '1')}]" for c in columns) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_long_csv(path):
    """(columns, rows as lists of strings) skipping comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rd = list(csv.reader(lines))
    return rd[0], rd[1:]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, config_digest: str, kernel_method: str, files, extra=None) -> Path:
    """manifest.json with the config hash, kernel method, versions and file digests."""
    import scipy

    from . import __version__

    out_dir = Path(out_dir)
    man = {
        "config_sha256": config_digest,
        "kernel_method": kernel_method,
        "versions": {"hyperstep": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "files": {Path(f).name: file_digest(f) for f in sorted(map(str, files))},
    }
    if extra:
        man.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")
