class InvalidParameterError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class FormatError(ValueError):
    """Raised when a file cannot be parsed; the message names the offending field."""
