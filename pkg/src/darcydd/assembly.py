"""Assembly of the pressure system and its subdomain operators.

The mixed discretization with a trapezoidal-lumped velocity mass matrix
collapses to a cell-centered two-point flux scheme: each internal face
``e`` between cells ``tau-`` and ``tau+`` couples the two pressures with
transmissibility ``T_e = kappa_e |e|^2 / |tau|`` where ``kappa_e`` is the
harmonic average of the two cell permeabilities.  No-flux outer
boundaries contribute nothing; zero-Dirichlet subdomain boundaries add a
half-cell-distance diagonal term ``2 kappa_tau |e|^2 / |tau|``.

Everything here returns scipy CSR matrices; symmetry is exact because
each face writes one symmetric entry quadruple.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Box, CoarseLayout, StructuredGrid, embedding_positions
from .media import PermField


class SingularSubdomainError(ValueError):
    """A local zero-Dirichlet matrix has no Dirichlet face and is singular."""

    def __init__(self, element: int):
        self.element = element
        super().__init__(
            f"oversampled element {element} covers the whole domain: its boundary "
            "meets only the no-flux outer boundary, so the local matrix is singular"
        )


@dataclass(frozen=True)
class DiagWeights:
    """Positive diagonal weight matrix for one coarse element."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64).ravel())
        object.__setattr__(self, "values", vals)
        if not np.all(vals > 0):
            raise ValueError("diagonal weights must be strictly positive")

    @property
    def n(self) -> int:
        return self.values.size


def harmonic_face(k_plus: float, k_minus: float) -> float:
    """Harmonic average 2 / (1/k_plus + 1/k_minus) of two cell values."""
    if k_plus <= 0 or k_minus <= 0:
        raise ValueError("face permeability needs two positive cell values")
    return 2.0 / (1.0 / k_plus + 1.0 / k_minus)


def _axis_slices(ndim: int, axis: int, sl: slice) -> tuple:
    out = [slice(None)] * ndim
    out[axis] = sl
    return tuple(out)


def _assemble_box(
    spacing: tuple[float, ...],
    kappa: np.ndarray,
    dirichlet_lo: tuple[bool, ...],
    dirichlet_hi: tuple[bool, ...],
) -> sp.csr_matrix:
    """Two-point flux matrix on a box of cells.

    ``kappa`` is shaped like the box.  Sides flagged Dirichlet add the
    half-distance diagonal terms; all other sides are no-flux.
    """
    shape = kappa.shape
    ndim = len(shape)
    n = int(np.prod(shape))
    volume = float(np.prod(spacing))
    ids = np.arange(n).reshape(shape, order="F")

    rows, cols, vals = [], [], []
    for axis in range(ndim):
        h = spacing[axis]
        scale = volume / (h * h)  # |e|^2 / |tau|
        if shape[axis] > 1:
            km = kappa[_axis_slices(ndim, axis, slice(None, -1))].ravel(order="F")
            kp = kappa[_axis_slices(ndim, axis, slice(1, None))].ravel(order="F")
            te = (2.0 / (1.0 / km + 1.0 / kp)) * scale
            lo = ids[_axis_slices(ndim, axis, slice(None, -1))].ravel(order="F")
            hi = ids[_axis_slices(ndim, axis, slice(1, None))].ravel(order="F")
            rows += [lo, hi, lo, hi]
            cols += [lo, hi, hi, lo]
            vals += [te, te, -te, -te]
        for sl, flagged in ((slice(0, 1), dirichlet_lo[axis]), (slice(-1, None), dirichlet_hi[axis])):
            if not flagged:
                continue
            cells = ids[_axis_slices(ndim, axis, sl)].ravel(order="F")
            kc = kappa[_axis_slices(ndim, axis, sl)].ravel(order="F")
            rows.append(cells)
            cols.append(cells)
            vals.append(2.0 * kc * scale)

    if not rows:
        return sp.csr_matrix((n, n))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return mat.tocsr()


def _box_kappa(grid: StructuredGrid, perm: PermField, box: Box) -> np.ndarray:
    full = perm.values.reshape(grid.dims, order="F")
    sl = tuple(slice(l, h) for l, h in zip(box.lo, box.hi))
    return np.ascontiguousarray(full[sl])


def assemble_fine(grid: StructuredGrid, perm: PermField) -> sp.csr_matrix:
    """Global pressure matrix; symmetric, PSD, kernel = constants."""
    ndim = grid.dimension
    kappa = perm.values.reshape(grid.dims, order="F")
    return _assemble_box(grid.spacing, kappa, (False,) * ndim, (False,) * ndim)


def assemble_local(
    grid: StructuredGrid,
    perm: PermField,
    layout: CoarseLayout,
    i: int,
    allow_singular: bool = False,
) -> sp.csr_matrix:
    """Zero-Dirichlet matrix on the oversampled element ``i``.

    Dirichlet terms appear on box sides interior to the domain; sides on
    the outer boundary stay no-flux.  When no side is interior the matrix
    is singular, which is rejected unless ``allow_singular`` is set.
    """
    box = layout.oversampled[i]
    dlo = tuple(l > 0 for l in box.lo)
    dhi = tuple(h < d for h, d in zip(box.hi, grid.dims))
    if not (any(dlo) or any(dhi)) and not allow_singular:
        raise SingularSubdomainError(i)
    return _assemble_box(grid.spacing, _box_kappa(grid, perm, box), dlo, dhi)


def assemble_interior(grid: StructuredGrid, perm: PermField, layout: CoarseLayout, i: int) -> sp.csr_matrix:
    """Matrix of the coupling form restricted to faces inside element ``i``."""
    box = layout.elements[i]
    ndim = grid.dimension
    return _assemble_box(grid.spacing, _box_kappa(grid, perm, box), (False,) * ndim, (False,) * ndim)


def assemble_weights(
    grid: StructuredGrid,
    perm: PermField,
    layout: CoarseLayout,
    i: int,
    mode: str = "kappa",
) -> DiagWeights:
    """Diagonal spectral weights on element ``i``.

    mode="kappa" takes the cell permeability times the cell volume.
    mode="lumped" row-lumps the absolute values of the local Dirichlet
    matrix restricted to the element, which dominates it by construction.
    """
    if mode == "kappa":
        ids = layout.cell_ids(i)
        return DiagWeights(perm.values[ids] * grid.cell_volume)
    if mode == "lumped":
        local = assemble_local(grid, perm, layout, i, allow_singular=True)
        pos = embedding_positions(layout, i)
        sub = local[pos][:, pos]
        lumped = np.asarray(np.abs(sub).sum(axis=1)).ravel()
        if not np.all(lumped > 0):
            raise ValueError(
                f"lumped weights on element {i} are not strictly positive; "
                "the element has no coupled or boundary faces"
            )
        return DiagWeights(lumped)
    raise ValueError(f"unknown weight mode {mode!r} (expected 'kappa' or 'lumped')")


def face_counts(grid: StructuredGrid) -> tuple[int, ...]:
    """Number of internal faces orthogonal to each axis."""
    counts = []
    for axis in range(grid.dimension):
        shape = list(grid.dims)
        shape[axis] -= 1
        counts.append(int(np.prod(shape)) if shape[axis] > 0 else 0)
    return tuple(counts)


def recover_velocity(grid: StructuredGrid, perm: PermField, pressure: np.ndarray) -> np.ndarray:
    """Face-normal velocities from a pressure vector.

    Returns one value per internal face, axis-0 faces first, each block
    x-fastest: ``v_e = -kappa_e |e| (p+ - p-) / |tau|``.  Outer boundary
    faces are no-flux and are not stored.
    """
    p = np.asarray(pressure, dtype=np.float64)
    if p.shape != (grid.n,):
        raise ValueError(f"pressure must have {grid.n} entries")
    kappa = perm.values.reshape(grid.dims, order="F")
    pgrid = p.reshape(grid.dims, order="F")
    ndim = grid.dimension
    blocks = []
    for axis in range(ndim):
        if grid.dims[axis] <= 1:
            blocks.append(np.zeros(0))
            continue
        km = kappa[_axis_slices(ndim, axis, slice(None, -1))]
        kp = kappa[_axis_slices(ndim, axis, slice(1, None))]
        ke = 2.0 / (1.0 / km + 1.0 / kp)
        jump = pgrid[_axis_slices(ndim, axis, slice(1, None))] - pgrid[_axis_slices(ndim, axis, slice(None, -1))]
        ve = -ke * jump * (grid.face_area(axis) / grid.cell_volume)
        blocks.append(ve.ravel(order="F"))
    return np.concatenate(blocks)


def divergence(grid: StructuredGrid, velocity: np.ndarray) -> np.ndarray:
    """Net outward flux per cell from a face-velocity vector.

    For a pressure solving the system this reproduces the per-cell source
    integrals (element-wise mass conservation).
    """
    counts = face_counts(grid)
    v = np.asarray(velocity, dtype=np.float64)
    if v.shape != (sum(counts),):
        raise ValueError(f"expected {sum(counts)} face values, got {v.shape}")
    ndim = grid.dimension
    out = np.zeros(grid.dims, order="F")
    offset = 0
    for axis in range(ndim):
        cnt = counts[axis]
        if cnt == 0:
            continue
        shape = list(grid.dims)
        shape[axis] -= 1
        flux = (v[offset : offset + cnt] * grid.face_area(axis)).reshape(shape, order="F")
        out[_axis_slices(ndim, axis, slice(None, -1))] += flux  # outflow through the +side face
        out[_axis_slices(ndim, axis, slice(1, None))] -= flux  # inflow through the -side face
        offset += cnt
    return out.ravel(order="F")
