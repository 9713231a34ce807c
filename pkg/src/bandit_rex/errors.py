"""Exceptions raised by bandit-rex.

Every error also subclasses the closest builtin so callers may catch either.
"""


class BanditRexError(Exception):
    """Base class for all bandit-rex errors."""


class ConfigError(BanditRexError, ValueError):
    """A configuration document is malformed or names an invalid value."""


class InvalidConfig(ConfigError):
    """An environment configuration violates its invariants."""


class LengthMismatch(BanditRexError, ValueError):
    """Two vectors that must have equal length do not."""


class DimensionMismatch(BanditRexError, ValueError):
    """An embedding row does not have the expected dimension."""


class DuplicateKey(BanditRexError, ValueError):
    """A key that must be unique appears more than once."""


class ParseError(BanditRexError, ValueError):
    """A data file could not be parsed."""


class MissingEmbedding(BanditRexError, KeyError):
    """An embedding table has no row for the requested key."""


class SolverFailure(BanditRexError, RuntimeError):
    """The posterior-mean solver did not reach its gradient tolerance."""

    def __init__(self, message: str, gradient_norm: float, round_index: int | None = None):
        super().__init__(message)
        self.gradient_norm = gradient_norm
        self.round_index = round_index

    def __str__(self) -> str:
        base = super().__str__()
        if self.round_index is None:
            return f"{base} (final gradient norm {self.gradient_norm:.3e})"
        return f"{base} in round {self.round_index} (final gradient norm {self.gradient_norm:.3e})"


class EmptyCandidates(BanditRexError, ValueError):
    """A selection problem was built without any candidates."""


class TooManyCandidates(BanditRexError, ValueError):
    """Exhaustive enumeration was asked for too many candidates."""


class MissingRecommendation(BanditRexError, KeyError):
    """A logged (user, week) has no recommendation set."""


class EmptyLog(BanditRexError, ValueError):
    """An interaction log has no records."""


class NoTypedEvents(BanditRexError, ValueError):
    """No event carried a dimension bit, so no diversity distribution exists."""


class MissingDataFile(BanditRexError, FileNotFoundError):
    """A required data file does not exist."""
