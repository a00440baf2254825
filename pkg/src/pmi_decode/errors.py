"""Exception hierarchy shared by the whole engine.

Exit-code mapping for the CLI lives in cli.py: config/usage errors map to 1,
source and transport errors to 2, internal invariant violations to 3.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for everything raised deliberately by this package."""


class DimensionError(EngineError, ValueError):
    """A vector's length does not match the vocabulary it is used with."""


class ConfigError(EngineError, ValueError):
    """A configuration value is out of its documented domain."""


class UsageError(EngineError, ValueError):
    """An operation was called in a way its contract forbids."""


class SourceError(EngineError, RuntimeError):
    """Base class for failures raised by model sources."""


class TraceMissError(SourceError, KeyError):
    """A replayed query was never recorded in the trace."""

    def __init__(self, context, image_id):
        self.context = tuple(context)
        self.image_id = image_id
        super().__init__(
            f"no trace record for context={self.context} image={image_id!r}"
        )


class TransportError(SourceError):
    """A remote query failed at the HTTP layer.

    ``attempts`` counts how many tries were made; ``retryable`` says whether
    another attempt could plausibly succeed.
    """

    def __init__(self, message, *, endpoint, attempts=1, retryable=False):
        self.endpoint = endpoint
        self.attempts = attempts
        self.retryable = retryable
        super().__init__(f"{message} (endpoint={endpoint}, attempts={attempts})")


class ProtocolError(SourceError):
    """The remote peer answered with a payload we cannot interpret."""

    def __init__(self, message, *, raw_body=None):
        self.raw_body = raw_body
        super().__init__(message)


class SessionError(SourceError):
    """The remote peer's vocabulary does not match the session header."""


class CapabilityError(SourceError):
    """A source was asked for something it declared it cannot do."""


class InvariantViolation(EngineError, RuntimeError):
    """An internal consistency check failed; indicates a bug, not bad input."""
