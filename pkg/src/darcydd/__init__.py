"""Pressure-system solver toolkit for heterogeneous Darcy flow.

Cell-centered two-point flux discretization of the mixed form with
velocity elimination, a two-level overlapping Schwarz preconditioner
whose coarse space comes from per-element generalized eigenproblems,
GMRES for the singular consistent system, and a dense desk-scale audit
of the structural guarantees.
"""

from .assembly import (
    DiagWeights,
    SingularSubdomainError,
    assemble_fine,
    assemble_interior,
    assemble_local,
    assemble_weights,
    divergence,
    harmonic_face,
    recover_velocity,
)
from .harness import RunConfig, RunReport, dump_field, load_config, load_field, run, sweep
from .krylov import CondEstimate, SolveReport, estimate_cond, gmres
from .media import PermField, SourceField, channel_medium, load_raster, uniform_medium, well_source
from .mesh import (
    Box,
    CoarseLayout,
    LayoutError,
    StructuredGrid,
    build_layout,
    embedding_positions,
    overlap_constant,
    restriction_indices,
)
from .precond import TwoLevelPreconditioner, setup
from .spectral import CoarseSpace, LocalEigenBasis, build_coarse_space, coarse_kernel_vector, solve_local_eigen
from .verify import AnalysisCertificate, audit, condition_bound

__version__ = "0.1.0"

__all__ = [
    "AnalysisCertificate",
    "Box",
    "CoarseLayout",
    "CoarseSpace",
    "CondEstimate",
    "DiagWeights",
    "LayoutError",
    "LocalEigenBasis",
    "PermField",
    "RunConfig",
    "RunReport",
    "SingularSubdomainError",
    "SolveReport",
    "SourceField",
    "StructuredGrid",
    "TwoLevelPreconditioner",
    "assemble_fine",
    "assemble_interior",
    "assemble_local",
    "assemble_weights",
    "audit",
    "build_coarse_space",
    "build_layout",
    "channel_medium",
    "coarse_kernel_vector",
    "condition_bound",
    "divergence",
    "dump_field",
    "embedding_positions",
    "estimate_cond",
    "gmres",
    "harmonic_face",
    "load_config",
    "load_field",
    "load_raster",
    "overlap_constant",
    "recover_velocity",
    "restriction_indices",
    "run",
    "setup",
    "solve_local_eigen",
    "sweep",
    "uniform_medium",
    "well_source",
]
