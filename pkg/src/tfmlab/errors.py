"""Exception hierarchy shared across tfmlab."""


class TFMError(Exception):
    """Base class for all tfmlab errors."""

    #: machine-readable reason emitted by the CLI
    reason = "Error"


class InvalidParameters(TFMError, ValueError):
    reason = "InvalidParameters"
