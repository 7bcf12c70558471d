"""Exception types shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, data/format errors -> 2,
NumericError -> 3.
"""


class NtgError(Exception):
    """Base class for all package errors."""


class ShapeError(NtgError, ValueError):
    """Operands have incompatible shapes; message names both shapes."""


class UsageError(NtgError):
    """Bad command line or configuration input."""


class NumericError(NtgError):
    """A computation produced a non-finite value where one is not allowed."""


class FormatError(NtgError, ValueError):
    """Base class for file format errors."""


class PgmError(FormatError):
    """Malformed or unsupported PGM file."""


class Ntx1Error(FormatError):
    """Base class for NTX1 container errors."""


class Ntx1MagicError(Ntx1Error):
    """File does not start with the NTX1 magic."""


class Ntx1VersionError(Ntx1Error):
    """Unsupported NTX1 version."""


class Ntx1DimsError(Ntx1Error):
    """Section dimensions are invalid or imply an implausible payload."""


class Ntx1TruncatedError(Ntx1Error):
    """File ends before the declared payload, or carries trailing bytes."""
