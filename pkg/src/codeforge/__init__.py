"""codeforge: a synthetic-data forge for RL with verifiable rewards on code.

Generates problems with a teacher model across multiple turns, grades them
with student attempts in a sandboxed executor, filters and deduplicates
the results, builds easy-medium-hard chains, and schedules difficulty
splits over RL training steps. The GRPO-variant advantage/clipping math
and the pass@k estimator live in :mod:`codeforge.rlmath`.
"""

from .model import (
    AttemptRecord,
    AttemptStatus,
    Chain,
    CurriculumSchedule,
    DatasetManifest,
    DifficultyLabel,
    EnvKind,
    ExecStatus,
    ExecutionResult,
    InvariantError,
    PassRateSummary,
    ProblemSpec,
    SeedSnippet,
    SeedSource,
)

__version__ = "0.1.0"

__all__ = [
    "AttemptRecord",
    "AttemptStatus",
    "Chain",
    "CurriculumSchedule",
    "DatasetManifest",
    "DifficultyLabel",
    "EnvKind",
    "ExecStatus",
    "ExecutionResult",
    "InvariantError",
    "PassRateSummary",
    "ProblemSpec",
    "SeedSnippet",
    "SeedSource",
    "__version__",
]
