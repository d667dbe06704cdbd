"""Exception types raised across the package."""


class HashNetsError(Exception):
    """Base class for all package errors."""


class InvalidInputError(HashNetsError, ValueError):
    """An argument violates an operation's precondition."""


class CapacityError(HashNetsError):
    """No prime field large enough for the requested hash family."""


class UnsupportedActivationError(HashNetsError):
    """The activation lacks a property the operation relies on."""


class RankDeficientError(HashNetsError):
    """A weight matrix required to be full rank is numerically singular."""


class FormatError(HashNetsError, ValueError):
    """A dataset file is malformed.

    The ``field`` attribute names the offending header entry or section.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class InvalidConfigError(HashNetsError, ValueError):
    """An architecture or training configuration is unusable."""


class TrainingDivergedError(HashNetsError, FloatingPointError):
    """The training loss became non-finite."""
