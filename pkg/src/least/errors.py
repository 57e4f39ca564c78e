"""Exception taxonomy shared across the pipeline."""

from __future__ import annotations


class LeastError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(LeastError):
    """An argument violates a precondition (shape mismatch, bad box, ...)."""


class ImageDecodeError(LeastError):
    """A file could not be decoded as a raster image."""


class WriteError(LeastError):
    """An output artifact could not be written."""


class EmptyRegionError(LeastError):
    """A mask has no foreground pixels; the region task cannot proceed."""


class ConfigError(LeastError):
    """A configuration value is out of its legal range."""


class DegenerateStyleError(LeastError):
    """Style and source text embed to the same point; no direction exists."""


class BackendError(LeastError):
    """A VLM or segmentation backend call failed."""


class ParseError(LeastError):
    """A VLM response did not match the expected grammar.

    Carries the raw response text for debugging.
    """

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class GroundingError(LeastError):
    """A grounding stage failed; ``stage`` names which one."""

    def __init__(self, stage: str, message: str, raw: str = ""):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.raw = raw


class DivergenceError(LeastError):
    """The optimization produced a non-finite loss.

    Carries the loss trace recorded up to the failing iteration.
    """

    def __init__(self, message: str, iteration: int, trace: list):
        super().__init__(message)
        self.iteration = iteration
        self.trace = trace


class MultiRegionError(LeastError):
    """A region in a multi-region run failed.

    ``partial_image`` holds the composite after the last successful region and
    ``completed`` the results of the regions that did finish.
    """

    def __init__(self, region_index: int, stage: str, message: str,
                 partial_image=None, completed=()):
        super().__init__(f"region {region_index} ({stage}): {message}")
        self.region_index = region_index
        self.stage = stage
        self.partial_image = partial_image
        self.completed = list(completed)


class BenchmarkRunError(LeastError):
    """More than half of the benchmark entries failed."""
