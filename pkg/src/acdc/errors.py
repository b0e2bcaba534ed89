"""Exception hierarchy.

Every error carries a ``category`` (its class name) that the command line
driver prints verbatim and maps to an exit code.
"""


class AcdcError(Exception):
    """Base class for all errors raised by the package."""

    exit_code = 8

    @property
    def category(self) -> str:
        return type(self).__name__


# -- configuration ---------------------------------------------------------

class ConfigError(AcdcError):
    exit_code = 2


class ConfigSyntaxError(ConfigError):
    pass


class UnknownName(ConfigError):
    pass


class DuplicateName(ConfigError):
    pass


class InvalidRole(ConfigError):
    pass


class InvalidModel(ConfigError):
    pass


class FdOverlap(ConfigError):
    pass


class CompositeFd(ConfigError):
    pass


class PathViolation(ConfigError):
    pass


# -- data ------------------------------------------------------------------

class EmptyTrainingSet(AcdcError):
    exit_code = 3


class StorageError(AcdcError):
    exit_code = 4


class ParseError(StorageError):
    pass


class MissingColumn(StorageError):
    pass


# -- planning / evaluation -------------------------------------------------

class UnhousedVariable(AcdcError):
    exit_code = 5


class LayoutMismatch(AcdcError):
    exit_code = 5


# -- functional dependencies -----------------------------------------------

class FdError(AcdcError):
    exit_code = 6


class FdViolation(FdError):
    pass


class MissingCooccurrence(FdError):
    pass


# -- optimisation ----------------------------------------------------------

class SolverError(AcdcError):
    exit_code = 7


class LineSearchStall(SolverError):
    pass


class NonlinearModel(SolverError):
    pass


class SingularSystem(SolverError):
    pass
