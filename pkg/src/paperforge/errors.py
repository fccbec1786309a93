"""Exception taxonomy shared across the pipeline.

The CLI maps these onto its exit-code contract: ConfigError -> 1,
StageError / IntegrityError / EvaluationError -> 2, InfrastructureError -> 3.
"""

from __future__ import annotations


class PaperforgeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PaperforgeError):
    """Invalid configuration or usage: bad flags, missing credentials, unknown schema."""


class StageError(PaperforgeError):
    """A pipeline stage failed in a way that aborts the run but leaves the workspace resumable."""

    def __init__(self, stage: str, message: str, *, detail: str | None = None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.detail = detail


class InfrastructureError(PaperforgeError):
    """Environment failure (sandbox setup, missing interpreter) rather than a code/pipeline error."""


class IntegrityError(PaperforgeError):
    """Workspace artifacts disagree with the manifest; resuming would be unsafe."""


class EvaluationError(PaperforgeError):
    """Evaluation could not be carried out (e.g. metric pattern never matched)."""
