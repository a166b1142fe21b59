"""Point-cloud files (HPC1 binary and CSV) and small JSON helpers."""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .lid import PointCloud

MAGIC = b"HPC1"
_HEADER = struct.Struct("<4sII")


def write_hpc(path, cloud: PointCloud | np.ndarray) -> None:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2:
        raise FormatError("point array must be 2-d")
    n_pts, n_ch = pts.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n_pts, n_ch))
        fh.write(np.ascontiguousarray(pts, dtype="<f4").tobytes())


def read_hpc(path) -> PointCloud:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, n_pts, n_ch = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * n_pts * n_ch
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    pts = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(n_pts, n_ch)
    return PointCloud(pts.astype(np.float64))


def write_csv_cloud(path, cloud: PointCloud | np.ndarray) -> None:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"c{i}" for i in range(pts.shape[1])])
        w.writerows(pts.tolist())


def read_csv_cloud(path) -> PointCloud:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    if header != [f"c{i}" for i in range(len(header))]:
        raise FormatError(f"{path}: header must be c0,c1,...")
    try:
        pts = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if pts.size and pts.shape[1] != len(header):
        raise FormatError(f"{path}: rows do not match the header width")
    return PointCloud(pts.reshape(-1, len(header)))


def read_cloud(path) -> PointCloud:
    """Dispatch on the file suffix: ``.csv`` is text, anything else HPC1."""
    if str(path).lower().endswith(".csv"):
        return read_csv_cloud(path)
    return read_hpc(path)


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")
