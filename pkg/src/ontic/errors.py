"""Exception hierarchy shared by every module."""

from __future__ import annotations


class OnticError(Exception):
    """Base class for all errors raised by this package."""


class LengthMismatch(OnticError):
    pass


class NonPositiveWeight(OnticError):
    pass


class DuplicateLabel(OnticError):
    pass


class UnknownMacrostate(OnticError, KeyError):
    pass


class NotNormalized(OnticError):
    def __init__(self, norm_squared: float):
        super().__init__(f"state is not normalized: squared norm = {norm_squared!r}")
        self.norm_squared = norm_squared


class SpaceMismatch(OnticError):
    pass


class LabelKindMismatch(OnticError):
    pass


class DimensionMismatch(OnticError):
    pass


class NonHermitian(OnticError):
    pass


class NonOrthonormalEigenbasis(OnticError):
    pass


class CapExceeded(OnticError):
    pass


class LevelTooDeep(OnticError):
    pass


class ZeroState(OnticError):
    pass


class InsufficientTrials(OnticError):
    pass


class ConfigParse(OnticError):
    """Malformed experiment configuration; ``where`` names the line or field."""

    def __init__(self, message: str, where: str | None = None):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where
        self.detail = message


class InvariantViolation(OnticError):
    """A numerical invariant checked at run time did not hold."""
