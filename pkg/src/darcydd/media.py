"""Permeability fields and source terms.

Provides periodic channel configurations, binary raster ingestion with
periodic tiling, constant and random fields, and the well-like source
term (four positive corner columns, one negative center column) whose
entries sum to zero exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import StructuredGrid

TILE = 16  # periodic channel tile size, in cells
CHANNEL_WIDTH = 2  # stripe width inside a tile, in cells


@dataclass(frozen=True)
class PermField:
    """Cell-wise constant permeability, strictly positive and finite."""

    grid: StructuredGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64).ravel())
        object.__setattr__(self, "values", vals)
        if vals.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} cell values, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("permeability must be finite")
        if not np.all(vals > 0):
            raise ValueError("permeability must be strictly positive")


@dataclass(frozen=True)
class SourceField:
    """Per-cell integrals of the source term; entries sum to zero."""

    grid: StructuredGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64).ravel())
        object.__setattr__(self, "values", vals)
        if vals.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} cell values, got {vals.shape}")
        l1 = np.abs(vals).sum()
        if abs(vals.sum()) > 1e-12 * max(l1, 1.0):
            raise ValueError("source integrals must sum to zero (compatibility)")


def uniform_medium(grid: StructuredGrid, value: float = 1.0) -> PermField:
    return PermField(grid, np.full(grid.n, float(value)))


def random_medium(grid: StructuredGrid, contrast: float, seed: int = 0) -> PermField:
    """Log-uniform field in [1, contrast]; handy for tests and audits."""
    if contrast < 1.0:
        raise ValueError("contrast must be >= 1")
    rng = np.random.default_rng(seed)
    exponents = rng.uniform(0.0, np.log10(contrast), size=grid.n)
    return PermField(grid, 10.0 ** exponents)


def channel_stripes(n_channels: int) -> np.ndarray:
    """Tile coordinates (along x) covered by the channel stripes.

    ``n_channels`` stripes of width 2 are evenly spaced inside a 16-cell
    tile, centered at 16*(2j+1)/(2*n_channels).
    """
    if n_channels not in (2, 3, 4, 5):
        raise ValueError(f"channel count must be in 2..5, got {n_channels}")
    cols = []
    for j in range(n_channels):
        center = TILE * (2 * j + 1) / (2 * n_channels)
        start = int(np.floor(center)) - 1
        cols.extend(range(start, start + CHANNEL_WIDTH))
    cols = np.unique(np.asarray(cols, dtype=int))
    if cols.size != n_channels * CHANNEL_WIDTH or cols.min() < 0 or cols.max() >= TILE:
        raise AssertionError("stripe construction produced overlapping or out-of-tile stripes")
    return cols


def channel_medium(grid: StructuredGrid, n_channels: int, cr: float) -> PermField:
    """Periodic channel medium: kappa = 10^cr inside channels, 1 outside.

    Channels run the full y-extent; the cross-section repeats with a
    16-cell period along x (and along z in 3D, where the stripes span the
    whole tile in z).  Requires the x (and z) cell counts to be divisible
    by 16.
    """
    if cr < 0:
        raise ValueError(f"contrast exponent must be >= 0, got {cr}")
    tiled_axes = (0,) if grid.dimension == 2 else (0, 2)
    for axis in tiled_axes:
        if grid.dims[axis] % TILE != 0:
            raise ValueError(
                f"axis {axis} cell count {grid.dims[axis]} is not divisible by the tile size {TILE}"
            )
    stripes = channel_stripes(n_channels)
    in_stripe = np.zeros(TILE, dtype=bool)
    in_stripe[stripes] = True

    coords = grid.unravel(np.arange(grid.n))
    alpha = in_stripe[coords[0] % TILE].astype(np.float64)
    return PermField(grid, 10.0 ** (alpha * cr))


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_raster(path, mask: np.ndarray, dims: tuple[int, ...]) -> None:
    """Write a binary raster: raw 0/1 bytes (x-fastest) plus a JSON sidecar."""
    path = Path(path)
    mask = np.asarray(mask, dtype=np.uint8).ravel()
    if mask.shape != (int(np.prod(dims)),):
        raise ValueError("mask length does not match dims")
    path.write_bytes(mask.tobytes())
    _sidecar_path(path).write_text(json.dumps({"dims": list(int(d) for d in dims)}))


def load_raster(path, grid: StructuredGrid, cr: float) -> PermField:
    """Load a binary raster and tile it periodically over the grid.

    Cells marked 1 get kappa = 10^cr, cells marked 0 get kappa = 1.  The
    raster dims (from the JSON sidecar) must divide the grid dims.
    """
    path = Path(path)
    sidecar = _sidecar_path(path)
    if not path.exists() or not sidecar.exists():
        raise FileNotFoundError(f"raster needs both {path} and {sidecar}")
    meta = json.loads(sidecar.read_text())
    rdims = tuple(int(d) for d in meta["dims"])
    if len(rdims) != grid.dimension:
        raise ValueError(f"raster is {len(rdims)}D but grid is {grid.dimension}D")
    raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    if raw.size != int(np.prod(rdims)):
        raise ValueError(f"raster holds {raw.size} bytes, sidecar declares dims {rdims}")
    if not np.all((raw == 0) | (raw == 1)):
        raise ValueError("raster bytes must be 0 or 1")
    for axis, (gd, rd) in enumerate(zip(grid.dims, rdims)):
        if gd % rd != 0:
            raise ValueError(f"raster dim {rd} does not divide grid dim {gd} on axis {axis}")
    mask = raw.reshape(rdims, order="F")
    coords = grid.unravel(np.arange(grid.n))
    tiled = mask[tuple(c % d for c, d in zip(coords, rdims))]
    return PermField(grid, np.where(tiled > 0, 10.0 ** cr, 1.0))


def well_source(grid: StructuredGrid) -> SourceField:
    """Well-like source: +1 in the four corner columns, -4 in the center.

    Columns extend over the whole z range in 3D (single cells in 2D).  The
    -4 center weight balances the four +1 corners, so the entries sum to
    zero exactly in integer arithmetic.
    """
    mx, my = grid.dims[0], grid.dims[1]
    corners = [(0, 0), (mx - 1, 0), (0, my - 1), (mx - 1, my - 1)]
    center = (mx // 2, my // 2)
    values = np.zeros(grid.n)
    zs = np.arange(grid.dims[2]) if grid.dimension == 3 else None

    def column(ix, iy, weight):
        if zs is None:
            values[grid.ravel((ix, iy))] += weight
        else:
            np.add.at(values, grid.ravel((np.full_like(zs, ix), np.full_like(zs, iy), zs)), weight)

    for ix, iy in corners:
        column(ix, iy, 1.0)
    column(*center, -4.0)
    return SourceField(grid, values)
