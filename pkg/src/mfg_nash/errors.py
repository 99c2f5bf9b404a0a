"""Exception types shared across the package."""

from __future__ import annotations


class DimensionError(ValueError):
    """An argument has the wrong shape; carries the offending argument name."""

    def __init__(self, argument: str, message: str):
        self.argument = argument
        super().__init__(f"{argument}: {message}")


class GridTooSmallError(ValueError):
    """A bracketing grid failed to contain the extremizer."""


class ConditionNotMetError(RuntimeError):
    """The small-horizon admissibility inequality fails and no override was given."""


class ConfigError(ValueError):
    """Config validation failed; lists every problem found, not just the first."""

    def __init__(self, messages: list[str]):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))
