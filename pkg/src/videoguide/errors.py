"""Exception hierarchy shared by every stage of the engine."""

from __future__ import annotations


class VideoGuideError(Exception):
    """Base class for all engine errors."""

    exit_code = 1


class ConfigurationError(VideoGuideError, ValueError):
    """Invalid task file, mismatched resolutions, bad dimensions and similar."""

    exit_code = 2


class DomainError(VideoGuideError, ValueError):
    """A metric was asked for on inputs outside its domain (e.g. empty clouds)."""


class SimulationDiverged(VideoGuideError, FloatingPointError):
    def __init__(self, message: str, object_id: int | None = None, step_index: int | None = None):
        super().__init__(message)
        self.object_id = object_id
        self.step_index = step_index


class TransportError(VideoGuideError):
    """A remote provider could not be reached or returned an HTTP failure."""

    exit_code = 3

    def __init__(self, message: str, attempts: int = 0, retry_after: float | None = None):
        super().__init__(message)
        self.attempts = attempts
        self.retry_after = retry_after


class ProtocolError(VideoGuideError):
    """A provider answered, but the answer cannot be interpreted."""

    exit_code = 3

    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


class TrackingLost(VideoGuideError):
    def __init__(self, message: str, keyframe: int | None = None):
        super().__init__(message)
        self.keyframe = keyframe


class AllRejected(VideoGuideError):
    """No candidate video scored above the acceptance threshold; sample more."""

    def __init__(self, message: str, scores: list[int] | None = None):
        super().__init__(message)
        self.scores = scores or []


class NoAffordance(VideoGuideError):
    pass


class OptimizationFailed(VideoGuideError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
