"""Desk-scale workbench for the heterogeneous neutron-diffusion k-eigenvalue
problem: uniform FEM assembly, the modified BPX preconditioner, matrix-level
block-encoding emulation, coarse-grid state preparation, and convergence
experiments."""

from ._kernels import backend_name
from .assembly import (
    CellMatrix8,
    SparseSymMatrix,
    assemble_2d_p1,
    assemble_LAC,
    cell_mass_8x8,
    mass_1d,
    stiffness_1d,
    tensor_mass,
    tensor_stiffness,
)
from .bpx import (
    BpxApply,
    BpxOp,
    InterpOp,
    bpx_build,
    bpx_pcg_solve,
    interp_1d_one_level,
    interp_multi,
    precond_operator,
    verify_flft,
)
from .eigensolve import (
    EigenPair,
    HamiltonianAction,
    build_H,
    coarse_seed,
    fission_weight,
    generalized_leading,
    leading_eig,
    qpe_emulate,
)
from .errors import (
    ConvergenceFailure,
    EncodingDefect,
    ResourceLimitError,
    StraddleError,
    UndefinedEstimateError,
)
from .geometry import (
    Box,
    ElementKind,
    MaterialProps,
    MeshSpec,
    RegionMap,
    build_checkerboard,
    cell_material,
    node_from_linear_index,
    node_linear_index,
)

__version__ = "0.1.0"
