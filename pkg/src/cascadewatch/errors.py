"""Exception hierarchy.

Every error raised by the package derives from :class:`CascadeWatchError` so
callers (and the CLI) can separate configuration problems from runtime ones.
"""

from __future__ import annotations


class CascadeWatchError(Exception):
    """Base class for all package errors."""


class ConfigError(CascadeWatchError, ValueError):
    """Invalid configuration or input data (CLI exit code 2)."""


# domain


class InvalidFrame(ConfigError):
    pass


class BoundViolation(ConfigError):
    def __init__(self, field: str, value: object, bound: str):
        super().__init__(f"{field}={value!r} violates bound {bound}")
        self.field = field
        self.value = value


class WeightSumViolation(ConfigError):
    def __init__(self, lambda1: float, lambda2: float):
        super().__init__(f"lambda1 + lambda2 = {lambda1 + lambda2!r}, expected 1")
        self.lambda1 = lambda1
        self.lambda2 = lambda2


class InvalidLabel(ConfigError):
    pass


# bus


class UnknownTopic(CascadeWatchError, KeyError):
    def __str__(self) -> str:
        return f"unknown topic {self.args[0]!r}"


class DuplicateSubscriber(CascadeWatchError):
    pass


class LagOverflow(CascadeWatchError):
    """A subscriber fell further behind than the topic's retention window."""


class PayloadMismatch(CascadeWatchError, TypeError):
    pass


# agents


class DegenerateFrame(CascadeWatchError, ValueError):
    pass


class StreamUnavailable(CascadeWatchError):
    pass


class UnknownCamera(CascadeWatchError, KeyError):
    def __str__(self) -> str:
        return f"unknown camera {self.args[0]!r}"


# cascade


class ShapeNotDivisible(CascadeWatchError, ValueError):
    pass


class BackendFailure(CascadeWatchError):
    def __init__(self, stage: object, cause: BaseException | None = None):
        super().__init__(f"stage {stage} backend failed: {cause!r}")
        self.stage = stage
        self.cause = cause


class UnknownScenarioClass(ConfigError, KeyError):
    def __str__(self) -> str:
        return f"no profile entry for scenario class {self.args[0]!r}"


# semantics


class ZeroVector(CascadeWatchError, ValueError):
    pass


class DimensionMismatch(CascadeWatchError, ValueError):
    pass


class EmptyClass(ConfigError):
    pass


class ZeroMean(CascadeWatchError, ValueError):
    pass


class UnknownLabel(CascadeWatchError, KeyError):
    pass


# fusion


class UnsortedInput(CascadeWatchError, ValueError):
    pass


class EmptyRun(CascadeWatchError, ValueError):
    pass


class WindowTooLarge(CascadeWatchError, ValueError):
    pass


class AccountingMismatch(CascadeWatchError, AssertionError):
    pass


# harness


class ScenarioError(ConfigError):
    pass


class UnknownClass(ScenarioError):
    pass


class IoFailure(CascadeWatchError, OSError):
    pass
