"""paperforge: research papers in, executable code repositories out.

Drives LLM/VLM calls through a four-stage pipeline (organization template,
multimodal parsing, hierarchical planning, feedback-driven implementation) and
scores generated repositories against references with line-weighted
completeness metrics.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    EvaluationError,
    InfrastructureError,
    IntegrityError,
    PaperforgeError,
    StageError,
)

__all__ = [
    "ConfigError",
    "EvaluationError",
    "InfrastructureError",
    "IntegrityError",
    "PaperforgeError",
    "StageError",
    "__version__",
]
