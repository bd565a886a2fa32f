"""Exception types shared across the package.

The CLI maps these onto process exit codes: ValidationError -> 1,
FormatError -> 2, InfeasibleError -> 3.
"""


class SpikestageError(Exception):
    """Base class for all package errors."""


class ValidationError(SpikestageError):
    """A configuration value or argument is out of contract."""


class FormatError(SpikestageError):
    """A file on disk does not parse as the expected format."""


class InfeasibleError(SpikestageError):
    """A search or sizing request has no feasible answer."""
