"""Exception taxonomy shared by all solver modules.

Exceptions are grouped into the categories the CLI maps to exit codes:
configuration problems, violated mathematical preconditions, failed
convergence, and internal (should-not-happen) errors.
"""


class QpfkError(Exception):
    """Base class for all package errors."""


class ConfigError(QpfkError):
    """Malformed or inconsistent run configuration."""


# -- precondition failures ------------------------------------------------

class PreconditionError(QpfkError):
    """A mathematical precondition of an operation is violated."""


class NonPositiveCoefficient(PreconditionError):
    """A field that must be strictly positive on the grid is not."""


class MixedSign(PreconditionError):
    """Twisted-equation coefficients have opposite signs; no log factorization."""


class NonzeroMean(PreconditionError):
    """Right-hand side of a cohomology equation has a mean above tolerance."""


class ResonanceDetected(PreconditionError):
    """Frequency vector is resonant (or nearly so) within the certification cutoff."""


class SmallDivisorUnderflow(PreconditionError):
    """A Fourier divisor needed by a solve is below the underflow floor."""


class UnsolvableResonant(PreconditionError):
    """Equal-average twisted equation with a right-hand side that has nonzero mean."""


class TransversalityLoss(PreconditionError):
    """Counterterm slope denominator too close to zero; the scalar unknown is undetermined."""


class RangeViolation(PreconditionError):
    """Composition with the potential would leave its declared analyticity domain."""


class NondegeneracyFailure(PreconditionError):
    """State fails the nondegeneracy checks required before a Newton step."""


class ImaginaryResidue(PreconditionError):
    """Grid values of a nominally real field carry imaginary parts above tolerance."""


class InterpolationUnderResolved(PreconditionError):
    """Spectral tail in the interpolation variable exceeds tolerance."""


# -- convergence failures --------------------------------------------------

class ConvergenceError(QpfkError):
    """Iteration terminated without reaching the requested tolerance."""

    def __init__(self, message, state=None, history=None):
        super().__init__(message)
        self.state = state
        self.history = history or []


class MaxIterations(ConvergenceError):
    """Iteration budget exhausted before the residual tolerance was met."""


class NoProgress(ConvergenceError):
    """Residuals stagnated (reduction below 10% on consecutive steps)."""


class UniquenessViolation(ConvergenceError):
    """A perturbed restart converged to a distinct solution."""

    def __init__(self, message, reference=None, offender=None, distance=None):
        super().__init__(message)
        self.reference = reference
        self.offender = offender
        self.distance = distance


# -- internal --------------------------------------------------------------

class SingularSystem(QpfkError):
    """Dense oracle system is singular or numerically unusable."""
