"""Exception types shared across the package."""


class CondraError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(CondraError):
    """A file or byte stream does not match the expected layout."""


class ConsistencyError(CondraError):
    """Parts of a bundle or structure disagree with each other."""


class DataError(CondraError):
    """Payload values violate an invariant (NaN coordinates, bad counts...)."""


class DimensionMismatch(CondraError):
    """Vector dimensionality does not match the corpus."""


class ConditionSyntaxError(CondraError):
    """Condition text failed to parse.  Carries the character position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class BindError(CondraError):
    """A condition references an attribute the corpus does not declare."""
