"""Shared test utilities: independent dense oracles and instance builders.

Everything here is deliberately loop-based and separate from the
production assembly paths so it can serve as an oracle.
"""

from __future__ import annotations

import numpy as np

from darcydd import StructuredGrid


def harmonic(a: float, b: float) -> float:
    return 2.0 / (1.0 / a + 1.0 / b)


def rt0_pressure_matrix(grid: StructuredGrid, kappa: np.ndarray) -> np.ndarray:
    """Dense mixed-assembly oracle for the eliminated pressure matrix.

    Builds the per-face divergence integrals D (one row per internal face)
    and the trapezoidal-lumped velocity mass matrix, then returns
    D^T diag(kappa_e / |tau|) D.
    """
    dims = grid.dims
    h = grid.spacing
    kap = np.asarray(kappa, dtype=np.float64).reshape(dims, order="F")
    n = grid.n
    vol = grid.cell_volume
    rows = []
    scale = []
    for axis in range(len(dims)):
        area = vol / h[axis]
        for coords in np.ndindex(*dims):
            if coords[axis] + 1 >= dims[axis]:
                continue
            upper = list(coords)
            upper[axis] += 1
            upper = tuple(upper)
            lo = np.ravel_multi_index(coords, dims, order="F")
            hi = np.ravel_multi_index(upper, dims, order="F")
            row = np.zeros(n)
            row[lo] = area       # int_tau- div(phi_e) with unit normal trace on e
            row[hi] = -area
            rows.append(row)
            scale.append(harmonic(kap[coords], kap[upper]) / vol)
    if not rows:
        return np.zeros((n, n))
    div = np.asarray(rows)
    return div.T @ (np.asarray(scale)[:, None] * div)


def log_uniform_kappa(grid: StructuredGrid, contrast: float, rng: np.random.Generator) -> np.ndarray:
    return 10.0 ** rng.uniform(0.0, np.log10(contrast), size=grid.n)


def random_grid(rng: np.random.Generator, max2d: int = 6, max3d: int = 4) -> StructuredGrid:
    if rng.integers(2):
        dims = tuple(int(rng.integers(2, max2d + 1)) for _ in range(2))
    else:
        dims = tuple(int(rng.integers(2, max3d + 1)) for _ in range(3))
    spacing = tuple(float(s) for s in 10.0 ** rng.uniform(-0.3, 0.3, size=len(dims)))
    return StructuredGrid(dims, spacing)


def zero_sum(rng: np.random.Generator, n: int) -> np.ndarray:
    b = rng.standard_normal(n)
    b -= b.mean()
    return b
