"""Exception types shared across the package.

Every error carries an ``exit_code`` so the command-line layer can map it
to a process status without a lookup table.
"""


class AmbiposeError(Exception):
    exit_code = 2


class DegenerateRotation6D(AmbiposeError, ValueError):
    exit_code = 3


class DegenerateMean(AmbiposeError, ValueError):
    exit_code = 3


class NonFiniteValue(AmbiposeError, FloatingPointError):
    exit_code = 3

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class ShapeMismatch(AmbiposeError, ValueError):
    pass


class ExcessiveDegeneracy(AmbiposeError, RuntimeError):
    exit_code = 3


class InvalidScene(AmbiposeError, ValueError):
    pass


class OffTrajectory(AmbiposeError, ValueError):
    pass


class UnknownColor(AmbiposeError, ValueError):
    pass


class EmptySamples(AmbiposeError, ValueError):
    pass


class LengthMismatch(AmbiposeError, ValueError):
    pass


class ArchitectureMismatch(AmbiposeError, ValueError):
    pass


class ParseError(AmbiposeError, ValueError):
    pass
