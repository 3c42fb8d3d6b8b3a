"""HSKL: a small binary container for skeleton datasets.

Layout (all little-endian)::

    offset  size        field
    0       4           magic b"HSKL"
    4       2           format version (uint16, currently 1)
    6       2           topology code (uint16: 0=J25, 1=C17, 2=C20, 3=U30)
    8       20          samples, persons, frames, joints, dims (5 x uint32)
    28      4*samples   labels (int32, -1 = unlabelled)
    ...     4*payload   float32 coordinates, sample-major (n, m, t, joints, dims)

The payload length must equal samples*persons*frames*joints*dims exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .topology import get_topology

MAGIC = b"HSKL"
VERSION = 1
TOPOLOGY_CODES = {"J25": 0, "C17": 1, "C20": 2, "U30": 3}
_HEADER = struct.Struct("<4sHH5I")


@dataclass
class SkeletonDataset:
    topology: str
    data: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.topology not in TOPOLOGY_CODES:
            raise FormatError(f"unknown topology {self.topology!r}")
        self.data = np.ascontiguousarray(self.data, dtype="<f4")
        self.labels = np.ascontiguousarray(self.labels, dtype="<i4")
        if self.data.ndim != 5:
            raise FormatError(f"dataset payload must be (n, m, t, joints, dims), got {self.data.shape}")
        if len(self.labels) != self.data.shape[0]:
            raise FormatError(f"{len(self.labels)} labels for {self.data.shape[0]} samples")
        topo = get_topology(self.topology)
        n_joints, dims = self.data.shape[-2:]
        # U30 and lifted C20 carry 3D data; only the joint count is fixed for those
        if n_joints != topo.n_joints or (self.topology in ("J25", "C17") and dims != topo.dims):
            raise FormatError(f"{self.topology} data cannot have {n_joints} joints x {dims} dims")

    def __eq__(self, other) -> bool:
        if not isinstance(other, SkeletonDataset):
            return NotImplemented
        return (
            self.topology == other.topology
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
            and self.labels.tobytes() == other.labels.tobytes()
        )


def write_dataset(path: str | Path, ds: SkeletonDataset) -> None:
    n, m, t, j, d = ds.data.shape
    header = _HEADER.pack(MAGIC, VERSION, TOPOLOGY_CODES[ds.topology], n, m, t, j, d)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(ds.labels.tobytes())
        fh.write(ds.data.tobytes())


def read_dataset(path: str | Path) -> SkeletonDataset:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if head[:4] != MAGIC:
            raise FormatError(f"{path}: bad magic {head[:4]!r}, expected {MAGIC!r}", offset=0)
        if len(head) < _HEADER.size:
            raise FormatError(f"{path}: header truncated: {len(head)} of {_HEADER.size} bytes", offset=len(head))
        _, version, code, n, m, t, j, d = _HEADER.unpack(head)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}", offset=4)
        names = {v: k for k, v in TOPOLOGY_CODES.items()}
        if code not in names:
            raise FormatError(f"{path}: unknown topology code {code}", offset=6)
        count = n * m * t * j * d
        body = fh.read()
    expected = _HEADER.size + 4 * n + 4 * count
    actual = _HEADER.size + len(body)
    if actual != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {n}x{m}x{t}x{j}x{d} samples, file has {actual}",
            offset=min(actual, expected),
        )
    labels = np.frombuffer(body, dtype="<i4", count=n).copy()
    data = np.frombuffer(body, dtype="<f4", count=count, offset=4 * n).reshape(n, m, t, j, d).copy()
    return SkeletonDataset(names[code], data, labels)
