"""
Exception families shared across the toolkit.

Each module defines its concrete exceptions next to the code that raises
them; they all derive from one of the three families below so the CLI can
map failures to exit codes.
"""


class TelecouplingError(Exception):
    """Base class for every error raised by the toolkit."""

    exit_code = 1


class InputError(TelecouplingError):
    """Raised when an input file is missing, malformed or inconsistent."""

    exit_code = 2


class SpecificationError(TelecouplingError):
    """Raised when a configuration, design or parameter set is invalid."""

    exit_code = 3


class EstimationError(TelecouplingError):
    """Raised when a numerical procedure cannot produce a result."""

    exit_code = 4
