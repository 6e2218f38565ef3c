"""Exception types shared across the package."""


class MedCausalError(Exception):
    """Base class for all package errors."""


class ConfigError(MedCausalError, ValueError):
    """Invalid or inconsistent configuration values."""


class DataFormatError(MedCausalError, ValueError):
    """A data file does not follow its expected layout."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class UnknownCodeError(DataFormatError):
    """A code is absent from a fixed vocabulary."""


class StructureError(MedCausalError, ValueError):
    """A graph violates a structural requirement (e.g. contains a cycle)."""


class ConstraintError(MedCausalError, ValueError):
    """A call violates a declared search constraint."""


class MissingArtifactError(MedCausalError, FileNotFoundError):
    """An upstream pipeline stage has not produced its outputs."""


class NumericError(MedCausalError, FloatingPointError):
    """Non-finite values appeared where finite ones are required."""
