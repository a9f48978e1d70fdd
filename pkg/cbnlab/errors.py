"""Error types raised by cbnlab.

Everything derives from ``ValueError`` (or ``FileNotFoundError``) so callers that
only care about bad input can keep catching the builtin.
"""

from __future__ import annotations

from typing import Any, Optional


class ShapeMismatchError(ValueError):
    """Tensor extents or channel counts disagree with the operation."""


class ReflectionPadError(ValueError):
    """Reflection padding wider than the plane it reflects."""


class NonScalarLossError(ValueError):
    """A gradient check was asked to differentiate a non-scalar output."""


class BatchSizeError(ValueError):
    """Batch statistics requested from a batch of one."""


class MissingBiasNetError(ValueError):
    """A central biasing layer has no bias network attached."""


class DegenerateBatchError(ValueError):
    """Batch statistics are too close to zero for an exact identity check."""


class InvalidExtentError(ValueError):
    """Image extent incompatible with the generator geometry."""


class ZeroFeatureError(ValueError):
    """Cosine similarity requested for a zero-norm feature vector."""


class InsufficientSamplesError(ValueError):
    """Fewer samples than requested clusters."""


class ConfigError(ValueError):
    """Experiment configuration could not be parsed.

    ``line`` and ``key`` point at the offending entry when known.
    """

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        line: Optional[int] = None,
        key: Optional[str] = None,
    ) -> None:
        self.path = path
        self.line = line
        self.key = key
        location = ""
        if path:
            location = f"{path}:{line}: " if line else f"{path}: "
        suffix = f" [{key}]" if key else ""
        super().__init__(f"{location}{message}{suffix}")


class NonFiniteLossError(ValueError):
    """Training produced a NaN/Inf loss; the run was aborted at ``step``."""

    def __init__(self, step: int, components: dict, history: Any = None) -> None:
        self.step = step
        self.components = components
        self.history = history
        parts = ", ".join(f"{k}={v}" for k, v in components.items())
        super().__init__(f"non-finite loss at step {step} ({parts})")


class MissingArtifactError(FileNotFoundError):
    """A checkpoint, dataset or config file does not exist."""
