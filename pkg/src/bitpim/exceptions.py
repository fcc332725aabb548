"""Exception hierarchy shared by all simulator modules."""


class PimError(Exception):
    """Base class for every error raised by bitpim."""


class DomainError(PimError, ValueError):
    """An input value lies outside the domain an operation accepts."""


class StructuralError(PimError, ValueError):
    """A container is internally inconsistent (plane count, shape, padding)."""


class BoundsError(PimError, IndexError):
    """Row/column index or vector width outside a sub-array's geometry."""


class InvalidOperandError(PimError, ValueError):
    pass


class ParameterError(PimError, ValueError):
    pass


class MappingError(PimError):
    """A layer does not fit into the memory hierarchy."""

    def __init__(self, message, required_rows=None, available_rows=None):
        super().__init__(message)
        self.required_rows = required_rows
        self.available_rows = available_rows


class ColdStartError(PimError):
    """Restore requested while no valid checkpoint exists."""


class IntegrityError(PimError):
    """A journal or container failed its well-formedness checks."""


class NumericError(PimError, ArithmeticError):
    pass


class ConfigError(PimError):
    """Configuration or model description could not be used."""

    def __init__(self, message, key=None, line=None):
        parts = [message]
        if key is not None:
            parts.append(f"key={key!r}")
        if line is not None:
            parts.append(f"line {line}")
        super().__init__(": ".join(parts[:1]) + ("" if len(parts) == 1 else " (" + ", ".join(parts[1:]) + ")"))
        self.key = key
        self.line = line


class VerificationError(PimError):
    """Simulator output diverged from the reference path."""
