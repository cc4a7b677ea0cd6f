class RationaleCFError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(RationaleCFError, ValueError):
    pass


class ContractError(RationaleCFError):
    """A documented precondition was violated by the caller."""


class DegenerateRowError(RationaleCFError, ValueError):
    pass


class NonFiniteError(RationaleCFError, FloatingPointError):
    pass


class ConfigError(RationaleCFError, ValueError):
    pass


class ParseError(RationaleCFError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class EmptyDatasetError(RationaleCFError, ValueError):
    pass


class SaturationError(RationaleCFError):
    """No room left to inject new edges into the graph."""
