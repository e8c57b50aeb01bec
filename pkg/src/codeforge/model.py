"""Shared domain types for the synthetic-problem forge.

Everything downstream (generation, grading, curation, scheduling) passes
these records around. They are immutable value objects: safe to share
across worker threads, compared by value, and persisted via
:mod:`codeforge.recordio`.

Pass rates are kept as exact rationals end to end. Binning and filtering
compare against decimal bounds like 0.81 or 0.97, and the binary doubles
nearest those decimals land on the wrong side of the bounds; a Fraction
never does.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence, Union


class InvariantError(ValueError):
    """A record violates one of its documented invariants."""


class EnvKind(enum.Enum):
    """The four problem environments."""

    INDUCTION = "induction"
    ABDUCTION = "abduction"
    DEDUCTION = "deduction"
    FUZZING = "fuzzing"


class SeedSource(enum.Enum):
    REAL_SOLUTION = "real_solution"
    CORPUS_SNIPPET = "corpus_snippet"


class DifficultyLabel(enum.Enum):
    EASY = "easy"
    EASY_MEDIUM = "easy-medium"
    MEDIUM = "medium"
    HARD = "hard"
    UNBINNED = "unbinned"


class AttemptStatus(enum.Enum):
    """Execution outcome of a single student submission."""

    OK = "ok"
    EXCEPTION = "exception"
    TIMEOUT = "timeout"
    PARSE_ERROR = "parse_error"


class ExecStatus(enum.Enum):
    """Outcome of one sandbox execution request."""

    OK = "ok"
    EXCEPTION = "exception"
    TIMEOUT = "timeout"
    OUT_OF_MEMORY = "out_of_memory"
    PROTOCOL_ERROR = "protocol_error"


PassRate = Fraction

# Pass rates are rendered with six decimal digits in reports; floats coming
# in from outside (CLI flags, hand-written fixtures) are snapped to that
# grid so 0.65 means 65/100, not the nearest double.
_SNAP_DENOMINATOR = 10**6


def as_pass_rate(p: Union[Fraction, float, int, str]) -> Fraction:
    """Coerce a pass-rate-like value to an exact Fraction in [0, 1].

    Floats are snapped to six decimal places. Strings accept both decimal
    ("0.875") and rational ("7/8") forms.
    """
    if isinstance(p, Fraction):
        q = p
    elif isinstance(p, bool):
        raise InvariantError(f"not a pass rate: {p!r}")
    elif isinstance(p, int):
        q = Fraction(p)
    elif isinstance(p, float):
        q = Fraction(round(p * _SNAP_DENOMINATOR), _SNAP_DENOMINATOR)
    elif isinstance(p, str):
        q = Fraction(p)
    else:
        raise InvariantError(f"not a pass rate: {p!r}")
    if not 0 <= q <= 1:
        raise InvariantError(f"pass rate out of [0, 1]: {p!r}")
    return q


def render_pass_rate(p: Fraction) -> str:
    """Six-digit decimal rendering used in reports and prompts."""
    return f"{float(p):.6f}"


@dataclass(frozen=True)
class SeedSnippet:
    """A contiguous slice of existing code used to ground generation."""

    seed_id: str
    source: SeedSource
    text: str
    line_count: int

    def __post_init__(self) -> None:
        actual = len(self.text.splitlines())
        if self.line_count != actual:
            raise InvariantError(
                f"line_count {self.line_count} != {actual} lines in text"
            )
        if self.source is SeedSource.CORPUS_SNIPPET and not 25 <= self.line_count <= 50:
            raise InvariantError(
                f"corpus snippet must be 25-50 lines, got {self.line_count}"
            )


@dataclass(frozen=True)
class ProblemSpec:
    """One generated problem, including grading references and lineage.

    ``code`` defines the guest function ``f`` (plus ``pre_test_f`` and
    ``test_f`` for fuzzing). ``gold_outputs`` hold canonical value text
    obtained by executing ``f`` on each input literal; they are the grading
    reference, never teacher-claimed values.
    """

    problem_id: str
    env: EnvKind
    code: str
    message: str
    inputs: tuple[str, ...]
    gold_outputs: tuple[str, ...]
    visible_k: Optional[int]
    seed_id: str
    turn_index: int
    parent_id: Optional[str] = None
    pass_rate: Optional[Fraction] = None
    bin_label: Optional[DifficultyLabel] = None
    dedup_digest: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "gold_outputs", tuple(self.gold_outputs))
        if len(self.gold_outputs) != len(self.inputs):
            raise InvariantError(
                f"{len(self.gold_outputs)} gold outputs for {len(self.inputs)} inputs"
            )
        if self.env is EnvKind.INDUCTION:
            if self.visible_k is None or not 1 <= self.visible_k < len(self.inputs):
                raise InvariantError(
                    f"induction needs 1 <= visible_k < {len(self.inputs)}, "
                    f"got {self.visible_k}"
                )
        else:
            if len(self.inputs) != 1:
                raise InvariantError(
                    f"{self.env.value} problems carry exactly one input, "
                    f"got {len(self.inputs)}"
                )
            if self.visible_k is not None:
                raise InvariantError(f"visible_k is induction-only, got {self.visible_k}")
        if self.turn_index < 1:
            raise InvariantError(f"turn_index must be >= 1, got {self.turn_index}")
        if self.turn_index >= 2 and self.parent_id is None:
            raise InvariantError("turn_index >= 2 requires parent_id")
        if self.pass_rate is not None:
            object.__setattr__(self, "pass_rate", as_pass_rate(self.pass_rate))

    @property
    def gold_output(self) -> str:
        """The single gold output of a one-input problem."""
        if len(self.gold_outputs) != 1:
            raise InvariantError("gold_output is single-input only")
        return self.gold_outputs[0]


@dataclass(frozen=True)
class AttemptRecord:
    """One graded student attempt."""

    problem_id: str
    attempt_index: int
    submission: str
    reward: int
    exec_status: AttemptStatus

    def __post_init__(self) -> None:
        if self.reward not in (0, 1):
            raise InvariantError(f"reward must be 0 or 1, got {self.reward}")
        if self.attempt_index < 0:
            raise InvariantError(f"attempt_index must be >= 0, got {self.attempt_index}")
        if self.reward == 1 and self.exec_status is not AttemptStatus.OK:
            raise InvariantError(
                f"reward 1 with exec_status {self.exec_status.value}"
            )


@dataclass(frozen=True)
class PassRateSummary:
    """Aggregate of M attempts on one problem, shown to the teacher."""

    problem_id: str
    attempts_m: int
    pass_rate: Fraction
    solved_examples: tuple[str, ...] = ()
    failed_examples: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "solved_examples", tuple(self.solved_examples))
        object.__setattr__(self, "failed_examples", tuple(self.failed_examples))
        if self.attempts_m < 1:
            raise InvariantError(f"attempts_m must be >= 1, got {self.attempts_m}")
        p = as_pass_rate(self.pass_rate)
        object.__setattr__(self, "pass_rate", p)
        if (p * self.attempts_m).denominator != 1:
            raise InvariantError(
                f"pass rate {p} is not a multiple of 1/{self.attempts_m}"
            )
        if len(self.solved_examples) > 2 or len(self.failed_examples) > 2:
            raise InvariantError("at most 2 representative examples per class")
        if (p > 0) != bool(self.solved_examples):
            raise InvariantError("solved_examples nonempty iff pass_rate > 0")
        if (p < 1) != bool(self.failed_examples):
            raise InvariantError("failed_examples nonempty iff pass_rate < 1")

    @property
    def reward_sum(self) -> int:
        return int(self.pass_rate * self.attempts_m)


@dataclass(frozen=True)
class Chain:
    """A hard -> medium -> easy triple built around one underlying task.

    Deliberately not self-validating: chain checking is a first-class
    operation (:func:`codeforge.curation.validate_chain`) and its tests
    need to construct broken chains.
    """

    chain_id: str
    hard: ProblemSpec
    medium: ProblemSpec
    easy: ProblemSpec


@dataclass(frozen=True)
class ScheduleStage:
    """One constant-weight span of RL steps, half-open [start, end)."""

    start_step: int
    end_step: int
    weights: Mapping[str, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", dict(self.weights))


@dataclass(frozen=True)
class CurriculumSchedule:
    """Piecewise-constant per-split sampling weights over RL steps.

    Construction only normalizes field shapes; structural rules (stage
    contiguity, simplex weights) live in
    :func:`codeforge.curriculum.validate_schedule` so malformed schedules
    can be represented and reported on.
    """

    name: str
    splits: tuple[str, ...]
    stages: tuple[ScheduleStage, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "splits", tuple(self.splits))
        object.__setattr__(self, "stages", tuple(self.stages))

    @property
    def horizon(self) -> int:
        return max((s.end_step for s in self.stages), default=0)


@dataclass(frozen=True)
class ExecutionResult:
    """Outcome of one sandbox request."""

    status: ExecStatus
    output_canonical: Optional[str] = None
    error_text: Optional[str] = None
    wall_ms: int = 0
    request_id: str = ""

    def __post_init__(self) -> None:
        if (self.status is ExecStatus.OK) != (self.output_canonical is not None):
            raise InvariantError("output_canonical set iff status is ok")

    @property
    def ok(self) -> bool:
        return self.status is ExecStatus.OK


@dataclass(frozen=True)
class DatasetManifest:
    """Sidecar summary written next to each dataset file."""

    path: str
    record_count: int
    per_env: Mapping[str, int] = field(default_factory=dict)
    per_bin: Mapping[str, int] = field(default_factory=dict)
    created_at: str = ""
    config_fingerprint: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_env", dict(self.per_env))
        object.__setattr__(self, "per_bin", dict(self.per_bin))


Record = Union[ProblemSpec, AttemptRecord, PassRateSummary, Chain]


def new_id(rng) -> str:
    """Content-free 128-bit identifier from the run's seeded RNG.

    Lineage is carried by parent_id fields, never packed into the id, so
    ids can stay opaque while same-seed runs reproduce them exactly.
    """
    return f"{rng.getrandbits(128):032x}"


def attempt_status_of(status: ExecStatus) -> AttemptStatus:
    """Collapse a sandbox status onto the attempt-level vocabulary."""
    if status is ExecStatus.OK:
        return AttemptStatus.OK
    if status is ExecStatus.TIMEOUT:
        return AttemptStatus.TIMEOUT
    return AttemptStatus.EXCEPTION


def require(condition: bool, message: str) -> None:
    if not condition:
        raise InvariantError(message)


def sorted_counts(items: Sequence[str]) -> dict[str, int]:
    """Stable {key: count} map with keys in sorted order."""
    counts: dict[str, int] = {}
    for key in sorted(items):
        counts[key] = counts.get(key, 0) + 1
    return counts
