"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 3,
``NumericalError`` -> 4 (usage errors exit 2 via argparse).
"""


class OncodeError(Exception):
    """Base class for all package errors."""


class DataError(OncodeError):
    """Malformed or inconsistent input data.

    Carries the offending path and 1-based line number when known.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line is not None:
                prefix += f"{line}:"
            prefix += " "
        super().__init__(prefix + message)


class NumericalError(OncodeError):
    """Divergence or non-finite values during numerical work."""


class CheckpointError(OncodeError):
    """Corrupt, truncated, or incompatible checkpoint files."""


class ConfigError(OncodeError):
    """Invalid run configuration."""
