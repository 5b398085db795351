"""Exception hierarchy shared across the toolkit."""


class PorohomError(Exception):
    """Base class for all toolkit errors."""


# --- RVE generation ---

class PackingFailed(PorohomError):
    """A disk/sphere could not be placed within the attempt budget."""


class DegenerateTessellation(PorohomError):
    """Power-diagram construction failed beyond what vertex merging repairs."""


# --- file I/O ---

class ParseError(PorohomError):
    """Malformed input file."""


class ValidationError(PorohomError):
    """A structural invariant is violated; message names invariant and entity."""


class VersionMismatch(PorohomError):
    """File header does not match the expected version or dimension."""


# --- micro solver ---

class ZeroLengthElement(PorohomError):
    """Beam element with (numerically) zero length."""


class SingularSystem(PorohomError):
    """Reduced micro stiffness is singular (disconnected or unconstrained)."""


class SingularMatrix(PorohomError):
    """Matrix inverse requested for a (near-)singular matrix."""


# --- macro FEM ---

class DegenerateElement(PorohomError):
    """Reference-to-physical Jacobian determinant is non-positive."""


class MissingTangent(PorohomError):
    """Constitutive callback does not provide a tangent."""


class UnsupportedMesh(PorohomError):
    """Operation requires a structured generator mesh."""


class MeshMismatch(PorohomError):
    """Two runs being compared do not share a mesh."""


# --- nonlinear solvers ---

class LineSearchFailed(PorohomError):
    """Wolfe line search exhausted its bracket."""


class MaxIterations(PorohomError):
    """Iteration budget exhausted before convergence."""


class SingularTangent(PorohomError):
    """Assembled tangent could not be factorized."""


class StepTooSmall(PorohomError):
    """Load increment fell below the minimum fraction."""


class NonPositiveJacobian(PorohomError):
    """det(F) <= 0 at a quadrature point; load-step cutback trigger."""


# --- surrogate / data ---

class ShapeMismatch(PorohomError):
    """Model and input dimensions disagree."""


class DivergedLoss(PorohomError):
    """Non-finite loss encountered during training."""


class EmptyDataset(PorohomError):
    """Operation requires a non-empty dataset."""
