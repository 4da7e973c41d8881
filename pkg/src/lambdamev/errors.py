"""Exception types shared by the library and the command line front end."""


class PreconditionError(ValueError):
    """An operation was called outside the domain its result is defined on."""


class SearchExhausted(RuntimeError):
    """A constructive search ran out of steps without producing a certificate."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}
