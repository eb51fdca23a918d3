class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class SingularityError(ArithmeticError):
    """A matrix that must be inverted is numerically singular."""


class InsufficientCounts(DomainError):
    """A measurement window carries no usable counts."""


class ConfigError(ValueError):
    """Invalid scenario or run configuration.

    ``fields`` lists every offending key so callers can report them together.
    """

    def __init__(self, fields, message=None):
        self.fields = list(fields)
        super().__init__(message or "invalid configuration: " + ", ".join(self.fields))
