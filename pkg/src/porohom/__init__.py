"""porohom: two-scale homogenization for polydisperse open-porous materials.

Beam-frame RVE micro solver with first Piola-Kirchhoff stress averaging,
an FE2-style macroscopic finite-element solver (BFGS / Quasi-Newton), and
a trainable neural surrogate replacing the micro-solver.
"""

from .errors import *  # noqa: F401,F403
from .rve import (  # noqa: F401
    BeamNetwork,
    Material,
    PoreSizeDistribution,
    SpherePacking,
    load_network,
    pack_disks,
    save_network,
    tessellate_periodic,
    validate_network,
)
from .micro import (  # noqa: F401
    ElementForces,
    MicroSolution,
    MicroSolver,
    assemble,
    average_stress,
    element_end_forces,
    element_stiffness,
    micro_stress,
    rank_one_det,
    rank_one_inverse,
    solve_micro,
)

__version__ = "0.1.0"
