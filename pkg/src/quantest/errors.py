"""Exception hierarchy.

Input/configuration problems derive from :class:`QuantestInputError`;
failures of a numerical procedure on valid input derive from
:class:`QuantestNumericalError`.  The CLI maps the two families to
different exit codes.
"""


class QuantestError(Exception):
    pass


class QuantestInputError(QuantestError, ValueError):
    pass


class QuantestNumericalError(QuantestError, ArithmeticError):
    pass


class NonFinite(QuantestInputError):
    """NaN (or otherwise unusable) value where a finite number is required."""


class InvalidQuantizer(QuantestInputError):
    pass


class DimensionMismatch(QuantestInputError):
    pass


class InvalidScenario(QuantestInputError):
    pass


class ConfigError(QuantestInputError):
    pass


class InsufficientResolution(QuantestInputError):
    """Quantizer too coarse for the requested estimation problem."""


class Saturated(QuantestNumericalError):
    """erf^-1 argument reached +-1: every pilot correlation agreed."""


class DegeneratePilot(QuantestNumericalError):
    """Pilot sequence never excites one of the directions needed."""


class EmptyCell(QuantestNumericalError):
    """Observed cell has zero probability at the evaluated parameters."""


class NotConverged(QuantestNumericalError):
    pass


class SingularFisher(QuantestNumericalError):
    pass


class SingularFisherWarning(RuntimeWarning):
    pass
