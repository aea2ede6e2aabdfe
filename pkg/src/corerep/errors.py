"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CoreError(Exception):
    """Base class for every error raised by corerep."""


class ValidationError(CoreError, ValueError):
    def __init__(self, message: str, sample_id: str | None = None):
        self.sample_id = sample_id
        if sample_id is not None:
            message = f"sample {sample_id!r}: {message}"
        super().__init__(message)


class InvalidPermutation(CoreError, ValueError):
    pass


class RoleError(CoreError, ValueError):
    pass


class CardinalityGuard(CoreError, ValueError):
    pass


class InvalidRepetition(CoreError, ValueError):
    pass


class WitnessUnavailable(CoreError, ValueError):
    pass


class CapabilityError(CoreError):
    pass


class CapacityError(CoreError, ValueError):
    pass


class EmptyContext(CoreError, ValueError):
    pass


class MockParseError(CoreError, ValueError):
    pass


class RetryableError(CoreError):
    """Transport-level failure that survived every retry attempt."""


class FatalError(CoreError):
    """Non-retryable backend failure (HTTP 4xx other than 429)."""

    def __init__(self, message: str, status_code: int | None = None, body_excerpt: str = ""):
        self.status_code = status_code
        self.body_excerpt = body_excerpt
        super().__init__(message)


class ConfigError(CoreError, ValueError):
    pass


class DatasetError(CoreError, ValueError):
    pass


class IngestError(CoreError, ValueError):
    def __init__(self, message: str, line_number: int):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")
