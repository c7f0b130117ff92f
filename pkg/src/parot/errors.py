"""Exception hierarchy shared by all parot modules."""


class ParotError(Exception):
    """Base class for every error raised by parot."""


class DimensionError(ParotError, ValueError):
    """Array or parameter dimensions do not agree."""


class InvalidMeasureError(ParotError, ValueError):
    """A weight vector is not a probability vector."""


class LPNumericalError(ParotError):
    """The simplex engine broke down (singular basis, iteration limit)."""


class InfeasibleError(ParotError):
    """A linear program that must be feasible turned out infeasible."""


class DependentVectorsError(ParotError, ValueError):
    """Gram-Schmidt input contains a (numerically) dependent vector."""


class MissingExtremePointsError(ParotError, ValueError):
    """The training set does not contain every corner of the parameter simplex."""


class SnapshotError(ParotError):
    """A high-fidelity snapshot solve failed during the offline phase."""

    def __init__(self, alpha, cause):
        self.alpha = alpha
        self.cause = cause
        super().__init__(f"snapshot solve failed at alpha={alpha}: {cause}")


class ModelMismatchError(ParotError, ValueError):
    """A reduced model is used with data it was not built for."""


class FormatError(ParotError, ValueError):
    """A serialized file is malformed or has an unsupported version."""
