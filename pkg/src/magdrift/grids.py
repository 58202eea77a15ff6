"""Grids, sampled fields, and the GDSN snapshot format.

The computational domain is the slab [-L, L]^2 x [-pi R0, pi R0) with the
third direction periodic.  Nodes are uniform, x_i = -L + i h in the open
directions and x3_k = -pi R0 + k h3 in the periodic one, so FFTs along x3
are natural and zero-padded doubling in the plane is straightforward.

GDSN is the project-wide little-endian snapshot format: magic ``GDSN``,
u32 version=1, u32 ndim, ndim u32 dims, ndim f64 physical extents, then
row-major f64 samples.  Domains are centered, so the extent per dimension
fully determines the node coordinates.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

GDSN_MAGIC = b"GDSN"
GDSN_VERSION = 1


@dataclass(frozen=True)
class SlabGrid3D:
    """Uniform grid on [-L, L]^2 x [-pi R0, pi R0), periodic in x3."""

    L: float = 4.0
    nx: int = 64
    ny: int = 64
    nz: int = 16
    R0: float = 1.0

    def __post_init__(self):
        if self.L <= 0.0:
            raise ValueError("L must be positive")
        for n in (self.nx, self.ny, self.nz):
            if n < 8:
                raise ValueError("grid counts must be >= 8")

    @property
    def hx(self) -> float:
        return 2.0 * self.L / self.nx

    @property
    def hy(self) -> float:
        return 2.0 * self.L / self.ny

    @property
    def hz(self) -> float:
        return 2.0 * np.pi * self.R0 / self.nz

    @property
    def cell_volume(self) -> float:
        return self.hx * self.hy * self.hz

    @property
    def shape(self):
        return (self.nx, self.ny, self.nz)

    def axis_x(self):
        return -self.L + self.hx * np.arange(self.nx)

    def axis_y(self):
        return -self.L + self.hy * np.arange(self.ny)

    def axis_z(self):
        return -np.pi * self.R0 + self.hz * np.arange(self.nz)

    def nodes(self):
        """All node coordinates, shape (nx, ny, nz, 3)."""
        X, Y, Z = np.meshgrid(self.axis_x(), self.axis_y(), self.axis_z(), indexing="ij")
        return np.stack([X, Y, Z], axis=-1)

    def wrap_x3(self, x3):
        span = 2.0 * np.pi * self.R0
        return (x3 + np.pi * self.R0) % span - np.pi * self.R0


@dataclass(frozen=True)
class Grid2D:
    """Uniform grid on [-L, L]^2 for the reduced model."""

    L: float = 4.0
    nx: int = 64
    ny: int = 64

    def __post_init__(self):
        if self.L <= 0.0:
            raise ValueError("L must be positive")
        if self.nx < 8 or self.ny < 8:
            raise ValueError("grid counts must be >= 8")

    @property
    def hx(self) -> float:
        return 2.0 * self.L / self.nx

    @property
    def hy(self) -> float:
        return 2.0 * self.L / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def shape(self):
        return (self.nx, self.ny)

    def axis_x(self):
        return -self.L + self.hx * np.arange(self.nx)

    def axis_y(self):
        return -self.L + self.hy * np.arange(self.ny)

    def nodes(self):
        X, Y = np.meshgrid(self.axis_x(), self.axis_y(), indexing="ij")
        return np.stack([X, Y], axis=-1)


@dataclass
class ScalarField3D:
    grid: SlabGrid3D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite samples")

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)


@dataclass
class ScalarField2D:
    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite samples")

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_area)


# ---------------------------------------------------------------------------
# GDSN snapshot IO


def write_gdsn(path, values: np.ndarray, extents) -> None:
    """Write a snapshot: row-major f64 samples on a centered uniform grid."""
    values = np.ascontiguousarray(values, dtype="<f8")
    extents = [float(e) for e in extents]
    if len(extents) != values.ndim:
        raise ValueError("one physical extent per dimension required")
    with open(path, "wb") as fh:
        fh.write(GDSN_MAGIC)
        fh.write(struct.pack("<II", GDSN_VERSION, values.ndim))
        fh.write(struct.pack(f"<{values.ndim}I", *values.shape))
        fh.write(struct.pack(f"<{values.ndim}d", *extents))
        fh.write(values.tobytes())


def read_gdsn(path):
    """Read a snapshot; returns (values, extents)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != GDSN_MAGIC:
            raise ValueError(f"bad magic {magic!r}, not a GDSN file")
        version, ndim = struct.unpack("<II", fh.read(8))
        if version != GDSN_VERSION:
            raise ValueError(f"unsupported GDSN version {version}")
        dims = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        extents = struct.unpack(f"<{ndim}d", fh.read(8 * ndim))
        count = int(np.prod(dims))
        data = np.frombuffer(fh.read(8 * count), dtype="<f8", count=count)
    return data.reshape(dims).copy(), list(extents)


def field3d_to_gdsn(path, f: ScalarField3D) -> None:
    g = f.grid
    write_gdsn(path, f.values, (2 * g.L, 2 * g.L, 2 * np.pi * g.R0))


def field2d_to_gdsn(path, f: ScalarField2D) -> None:
    g = f.grid
    write_gdsn(path, f.values, (2 * g.L, 2 * g.L))
