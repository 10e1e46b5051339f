"""Two-level additive preconditioner with factorized subdomain solvers.

Application computes ``R0^T A0_pinv (R0 r) + sum_i Ri^T Ai^-1 (Ri r)``.
Local matrices are factorized once; the singular coarse matrix is handled
by factorizing a rank-one deflated shift and projecting the solve output
against the known kernel vector, which reproduces the pseudo-inverse
solution exactly.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import CoarseLayout
from .spectral import CoarseSpace, coarse_kernel_vector


class FactorizationError(RuntimeError):
    """A local or coarse factorization failed."""


# the subdomain matrices are SPD M-matrices: symmetric-pattern ordering
# halves the fill and diagonal pivoting is safe
_SPLU_OPTIONS = dict(
    permc_spec="MMD_AT_PLUS_A",
    options=dict(SymmetricMode=True, DiagPivotThresh=0.001),
)


def factorize_local(mat: sp.spmatrix, element: int | None = None):
    """Sparse LU of one subdomain matrix (SPD by construction)."""
    try:
        return spla.splu(sp.csc_matrix(mat), **_SPLU_OPTIONS)
    except RuntimeError as exc:
        where = "local matrix" if element is None else f"local matrix of element {element}"
        raise FactorizationError(f"failed to factorize {where}: {exc}") from exc


class DeflatedCoarseSolver:
    """Pseudo-inverse solves with a singular PSD coarse matrix.

    Factorizes ``A0 + sigma z z^T / (z^T z)`` with ``sigma`` set from the
    matrix trace, then removes the kernel component from each solution.
    """

    def __init__(self, a0: sp.spmatrix, kernel: np.ndarray):
        a0 = sp.csc_matrix(a0)
        nc = a0.shape[0]
        z = np.asarray(kernel, dtype=np.float64)
        if z.shape != (nc,):
            raise ValueError("kernel vector size does not match the coarse matrix")
        znorm2 = float(z @ z)
        if znorm2 == 0.0:
            raise ValueError("kernel vector must be nonzero")
        sigma = a0.diagonal().sum() / nc
        if sigma <= 0.0:
            sigma = 1.0
        shifted = a0 + (sigma / znorm2) * sp.csc_matrix(np.outer(z, z))
        try:
            self._factor = spla.splu(shifted.tocsc())
        except RuntimeError as exc:
            raise FactorizationError(f"failed to factorize the deflated coarse matrix: {exc}") from exc
        self.kernel = z
        self._znorm2 = znorm2
        self.sigma = float(sigma)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        y = self._factor.solve(rhs)
        return y - ((self.kernel @ y) / self._znorm2) * self.kernel


class TwoLevelPreconditioner:
    """Additive combination of the coarse solve and the subdomain solves.

    Immutable after construction; ``apply`` is safe to call concurrently.
    """

    def __init__(self, layout, space, local_ids, local_factors, coarse, a0):
        self.layout = layout
        self.space = space
        self.local_ids = local_ids
        self.local_factors = local_factors
        self.coarse = coarse
        self.a0 = a0
        self.n = layout.grid.n

    @property
    def kernel(self) -> np.ndarray:
        return self.coarse.kernel

    def apply(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (self.n,):
            raise ValueError(f"residual must have {self.n} entries")
        r0t = self.space.prolongation
        out = r0t @ self.coarse.solve(r0t.T @ r)
        for ids, factor in zip(self.local_ids, self.local_factors):
            out[ids] += factor.solve(r[ids])
        return out

    def as_operator(self) -> spla.LinearOperator:
        return spla.LinearOperator((self.n, self.n), matvec=self.apply, rmatvec=self.apply, dtype=np.float64)


def coarse_matrix(a_mat: sp.spmatrix, space: CoarseSpace) -> sp.csr_matrix:
    """Galerkin coarse matrix R0 A R0^T, symmetrized exactly."""
    r0t = space.prolongation
    a0 = (r0t.T @ (a_mat @ r0t)).tocsr()
    return ((a0 + a0.T) * 0.5).tocsr()


def setup(
    a_mat: sp.spmatrix,
    layout: CoarseLayout,
    space: CoarseSpace,
    local_mats,
    local_factors=None,
) -> TwoLevelPreconditioner:
    """Build the preconditioner from assembled pieces.

    ``local_mats`` are the per-element zero-Dirichlet matrices; their
    factorizations may be passed in when already computed (they are not
    recomputed in that case).
    """
    if local_factors is None:
        local_factors = [factorize_local(m, element=i) for i, m in enumerate(local_mats)]
    local_ids = [layout.cell_ids(i, oversampled=True) for i in range(layout.n_elements)]

    a0 = coarse_matrix(a_mat, space)
    z = coarse_kernel_vector(space)
    norm_a0 = np.abs(a0).sum(axis=1).max() if a0.nnz else 0.0
    kernel_defect = np.linalg.norm(a0 @ z)
    if kernel_defect > 1e-8 * max(norm_a0, 1e-300) * np.linalg.norm(z):
        raise FactorizationError(
            f"coarse matrix does not annihilate the constant mode "
            f"(|A0 z| = {kernel_defect:.3e}); local eigenbases look inconsistent"
        )
    coarse = DeflatedCoarseSolver(a0, z)
    return TwoLevelPreconditioner(layout, space, local_ids, local_factors, coarse, a0)
