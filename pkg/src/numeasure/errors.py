"""Exception hierarchy shared by all modules."""


class NumeasureError(Exception):
    """Base class for every error raised by this package."""


class PreconditionError(NumeasureError, ValueError):
    """An argument violates a documented precondition."""


class ConvergenceError(NumeasureError):
    """An iterative method exhausted its budget.

    ``residual`` holds the last residual measure (a float or an array).
    """

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class NearKnotError(NumeasureError):
    """A closed-form Hilbert transform was requested inside the knot guard band."""


class AmbiguousCountError(NumeasureError):
    """A root of the tangent polynomial sits in the guard band around the unit circle."""


class QuasiHermitianError(NumeasureError):
    """The numerical range has empty interior; use the one-dimensional density."""


class DiracMeasureError(NumeasureError):
    """The matrix is scalar so the measure is a point mass without density."""


class CycleStructureError(NumeasureError):
    """No crossing-free angle was found to read off the antipodal permutation."""
