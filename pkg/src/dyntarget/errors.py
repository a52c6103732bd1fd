"""Exception types shared across the package.

The CLI maps these onto process exit codes, so new failure modes should
reuse one of the classes below rather than raising bare exceptions.
"""
from __future__ import annotations


class ParameterError(ValueError):
    """An argument or configuration value is out of its documented range."""


class ConfigError(ParameterError):
    """A config file could not be parsed or contains inconsistent entries."""


class FormatError(ValueError):
    """A binary file does not match its on-disk format.

    ``offset`` is the byte position where the problem was detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class InfeasibleActionError(ValueError):
    """A sample was requested with less charge than one sample costs."""


class ConsistencyError(ValueError):
    """Two artifacts that must describe the same strip do not."""


class ResourceError(RuntimeError):
    """An operation would exceed a configured memory or size cap."""


class EpisodeError(RuntimeError):
    """A policy raised while deciding; ``step`` is the 1-based timestep."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step
