"""Named error classes. The CLI maps each to a distinct nonzero exit code."""

from __future__ import annotations


class MultiONError(Exception):
    exit_code = 1


class SceneParseError(MultiONError):
    exit_code = 2


class SceneValidationError(MultiONError):
    exit_code = 3


class GenerationError(MultiONError):
    exit_code = 4


class EpisodeSpecError(MultiONError):
    exit_code = 5


class EpisodeTerminatedError(MultiONError):
    exit_code = 6


class UnreachableError(MultiONError):
    exit_code = 7


class BudgetExceededError(MultiONError):
    exit_code = 8


class RewardError(MultiONError):
    exit_code = 9


class ShapeError(MultiONError):
    exit_code = 10


class MetricsError(MultiONError):
    exit_code = 11


class ConfigError(MultiONError):
    exit_code = 12


class ReplanNeeded(MultiONError):
    """Raised by the local policy when the goal cannot be reached on the current map."""

    exit_code = 13
