"""Exception hierarchy for the acma package."""


class AcmaError(Exception):
    """Base class for all package errors."""


class InvalidStructure(AcmaError):
    """J(p) is singular or J(p)^2 + I exceeds the validity threshold."""


class DegenerateFrame(AcmaError):
    """Gram-Schmidt pivot fell below the degeneracy threshold."""


class StencilOutOfDomain(AcmaError):
    """A finite-difference stencil would leave the admissible region."""


class NotPositiveDefinite(AcmaError):
    """A(u) is not positive definite where the operation requires it."""


class NoContraction(AcmaError):
    """Picard iteration for a disk failed to contract."""


class JetTooLong(AcmaError):
    """Disk jets of order > 2 are not supported."""


class DiskEscapesDomain(AcmaError):
    """A disk sample point left the field's domain."""


class EmptyDomain(AcmaError):
    """The sublevel set {rho < 0} contains no grid point."""


class NotStrictlyPsh(AcmaError):
    """A defining function or iterate lost strict plurisubharmonicity."""


class TransversalityFailure(AcmaError):
    """The gradient of rho is too small on the boundary band."""


class NewtonStalled(AcmaError):
    """Damped Newton failed to decrease the residual."""


class LostPositivity(AcmaError):
    """No damped step keeps A(u) above the margin floor."""


class ScheduleTooShort(AcmaError):
    """Vanishing-RHS schedule terminated before the tail settled."""


class GridMismatch(AcmaError):
    """Imported field metadata does not match the target grid."""


class ParseError(AcmaError):
    """Malformed field file; carries a line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ConfigError(AcmaError):
    """Unknown or missing configuration keys."""
