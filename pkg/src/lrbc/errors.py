"""Exception types shared across the package."""


class LrbcError(Exception):
    """Base class for all package errors."""


class SingularChannel(LrbcError):
    """Channel matrix is (numerically) rank deficient; caller should resample."""


class DependentColumns(LrbcError):
    """Basis columns are linearly dependent within tolerance."""


class BoundTooSmall(LrbcError):
    """Shortest-vector search radius contained no nonzero lattice point."""


class NonIntegerMatrix(LrbcError):
    """Matrix expected to have Gaussian-integer entries does not."""


class NonOddData(LrbcError):
    """Data vector expected on the odd coordinate grid has an even entry."""


class ConstellationTooLarge(LrbcError):
    """Exact power enumeration requested for a constellation above the cap."""


class InsufficientData(LrbcError):
    """Not enough usable measurement points for the requested fit."""


class GridMismatch(LrbcError):
    """Two result files do not share a common SNR grid."""


class NonTermination(LrbcError):
    """Internal iteration cap exceeded; indicates invalid input or a bug."""
