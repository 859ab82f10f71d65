"""Exception types shared across the package."""

from __future__ import annotations


class ValidationError(ValueError):
    """Malformed or out-of-contract input data."""


class CapacityLimitError(ValidationError):
    """A cost-table request exceeded the configured capacity ceiling."""


class InfeasibleError(RuntimeError):
    """The constraint system admits no allocation.

    Carries a structured ``report`` dict naming the violated condition so
    callers (and the CLI) can surface it without parsing the message.
    """

    def __init__(self, reason: str, **details):
        super().__init__(reason)
        self.report = {"reason": reason, **details}
