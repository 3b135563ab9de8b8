"""Exception hierarchy shared by all pipeline stages.

The three intermediate bases map onto the CLI exit codes: configuration
and schema problems exit 2, corrupt on-disk data exits 3, numerical
failures exit 4.
"""


class ForgeError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class InputError(ForgeError):
    """Invalid arguments, schemas, or geometry supplied by the caller."""

    exit_code = 2


class DataError(ForgeError):
    """On-disk data that fails integrity checks."""

    exit_code = 3


class NumericalError(ForgeError):
    """A numerical procedure could not produce a valid result."""

    exit_code = 4


class EmptyInput(InputError):
    pass


class InvalidGeometry(InputError):
    pass


class InvalidArgument(InputError):
    pass


class ParseError(InputError):
    pass


class SchemaError(InputError):
    pass


class CorruptSample(DataError):
    pass


class MissingOrgan(InputError):
    pass


class InvalidStats(InputError):
    pass


class MissingMaterial(InputError):
    pass


class UnconstrainedSystem(NumericalError):
    pass


class SolverFailure(NumericalError):
    pass


class LatticeCoverageError(InputError):
    pass


class MissingThreshold(InputError):
    pass


class DegenerateStats(InputError):
    pass


class ShapeError(InputError):
    pass


class InvalidPrediction(InputError):
    pass


class InvalidProtocol(InputError):
    pass


class InvalidInput(InputError):
    pass
