"""Exception types shared across the package."""


class WindfleetError(Exception):
    """Base class for all package errors."""


class ConfigurationError(WindfleetError, ValueError):
    """Invalid configuration value or reference to an unknown entity."""


class DomainError(WindfleetError, ValueError):
    """Input violates an operation's precondition."""


class DegenerateDataError(DomainError):
    """Too little or too collapsed data for the requested fit."""


class ScadaParseError(WindfleetError, ValueError):
    """Malformed SCADA input. Carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NonConvergenceError(WindfleetError, RuntimeError):
    """A numerical routine failed to converge and the caller demanded it."""
