"""Pressure-robust, divergence-free finite element solver for a linearized MHD model.

Velocity in BDM, pressure in discontinuous P_{k-1}, magnetic induction in
second-kind Nedelec elements, with interior penalty, upwinding and jump
stabilization of the magnetic advection term.
"""

from .assembly import ProblemParams, assemble_system, make_discretization
from .cases import get_case
from .harness import RunConfig, run_case
from .mesh import generate_cube_mesh, generate_lshape_mesh, import_msh
from .norms import compute_errors, convergence_rates
from .solver import solve

__all__ = [
    "ProblemParams", "RunConfig", "assemble_system", "compute_errors", "convergence_rates",
    "generate_cube_mesh", "generate_lshape_mesh", "get_case", "import_msh",
    "make_discretization", "run_case", "solve",
]
