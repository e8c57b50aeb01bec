"""Multi-turn generation loop: seed, ask, grade, summarize, adapt, filter.

A session walks one seed through ``turns_per_seed`` teacher turns. Turn 1
conditions on the seed snippet; each later turn conditions on the
immediately preceding problem and a summary of the student's M attempts on
it — never the full transcript. The teacher is steered by a progression
directive derived from the pass rate: above 0.65 the problem gets harder,
at exactly 0 it gets easier, anywhere in between the teacher re-targets
the 0.35-0.65 band.

Candidates are filtered (pass-rate band, dedup) after grading; a dropped
turn still advances the loop, conditioning on the last problem that
materialized. With a scripted backend, a fixed rng seed, and concurrency 1
the whole run is bit-reproducible, record ids included, because ids are
drawn from the run's seeded rng.
"""

from __future__ import annotations

import enum
import json
import logging
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from . import environments as envs
from .model import (
    AttemptRecord,
    EnvKind,
    InvariantError,
    PassRateSummary,
    ProblemSpec,
    SeedSnippet,
    SeedSource,
    as_pass_rate,
    new_id,
    render_pass_rate,
)
from .modelclient import CompletionBackend, CompletionParams, STUDENT_DEFAULTS, TEACHER_DEFAULTS, log_completion
from .prompts import load_template, render_template
from .sandbox import ExecLimits, Executor

log = logging.getLogger(__name__)

SNIPPET_MIN_LINES = 25
SNIPPET_MAX_LINES = 50

HARDER_THRESHOLD = Fraction(65, 100)
TARGET_BAND = (Fraction(35, 100), Fraction(65, 100))


class CorpusTooSmall(ValueError):
    """Seed corpus has fewer lines than the largest snippet window."""


class SeedAborted(RuntimeError):
    """No valid turn-1 problem after the allowed retries."""


class Directive(enum.Enum):
    MAKE_HARDER = "make_harder"
    MAKE_EASIER = "make_easier"
    TARGET_MEDIUM = "target_medium"


class DropReason(enum.Enum):
    PARSE_FAIL = "parse_fail"
    EXEC_FAIL = "exec_fail"
    NONDETERMINISTIC = "nondeterministic"
    TOO_EASY = "too_easy"
    TOO_HARD = "too_hard"
    DUPLICATE = "duplicate"


@dataclass(frozen=True)
class PipelineConfig:
    env: EnvKind
    turns_per_seed: int = 6
    attempts_m: int = 32
    filter_band: tuple[Fraction, Fraction] = (Fraction(1, 100), Fraction(97, 100))
    concurrency: int = 1
    rng_seed: int = 0
    limits: ExecLimits = field(default_factory=ExecLimits)
    turn1_retries: int = 2  # extra tries after the first turn-1 failure

    def __post_init__(self) -> None:
        if self.turns_per_seed < 1:
            raise InvariantError("turns_per_seed must be >= 1")
        if self.attempts_m < 1:
            raise InvariantError("attempts_m must be >= 1")
        low, high = (as_pass_rate(self.filter_band[0]), as_pass_rate(self.filter_band[1]))
        if not 0 <= low < high <= 1:
            raise InvariantError(f"bad filter band: [{low}, {high}]")
        object.__setattr__(self, "filter_band", (low, high))
        if self.concurrency < 1:
            raise InvariantError("concurrency must be >= 1")


@dataclass(frozen=True)
class TurnOutcome:
    """What one teacher turn produced, kept or not."""

    turn_index: int
    kept: bool
    problem: Optional[ProblemSpec] = None
    summary: Optional[PassRateSummary] = None
    drop_reason: Optional[DropReason] = None
    attempts: tuple[AttemptRecord, ...] = ()
    detail: str = ""

    def __post_init__(self) -> None:
        if self.kept != (self.drop_reason is None):
            raise InvariantError("kept iff drop_reason absent")


class DedupIndex:
    """Shared set of content digests with atomic check-and-insert."""

    def __init__(self) -> None:
        self._seen: set[str] = set()
        self._lock = threading.Lock()

    def check_and_insert(self, digest: str) -> bool:
        """True if the digest was new (and is now registered)."""
        with self._lock:
            if digest in self._seen:
                return False
            self._seen.add(digest)
            return True

    def __len__(self) -> int:
        return len(self._seen)


def sample_seed(corpus_text: str, rng: random.Random) -> SeedSnippet:
    """Uniform random 25-50 line window over one corpus file."""
    lines = corpus_text.splitlines()
    if len(lines) < SNIPPET_MAX_LINES:
        raise CorpusTooSmall(
            f"corpus has {len(lines)} lines, need >= {SNIPPET_MAX_LINES}"
        )
    length = rng.randint(SNIPPET_MIN_LINES, SNIPPET_MAX_LINES)
    start = rng.randint(0, len(lines) - length)
    text = "\n".join(lines[start : start + length])
    return SeedSnippet(
        seed_id=new_id(rng),
        source=SeedSource.CORPUS_SNIPPET,
        text=text,
        line_count=length,
    )


def summarize_attempts(attempts: Sequence[AttemptRecord], m: int) -> PassRateSummary:
    """Exact pass rate plus up to two representatives per class.

    Representatives are the shortest submissions in each class, ties broken
    by attempt order, which keeps later prompts small and selection
    deterministic.
    """
    if len(attempts) != m:
        raise InvariantError(f"expected exactly {m} attempts, got {len(attempts)}")
    rewards = sum(a.reward for a in attempts)
    solved = sorted(
        (a for a in attempts if a.reward == 1),
        key=lambda a: (len(a.submission), a.attempt_index),
    )
    failed = sorted(
        (a for a in attempts if a.reward == 0),
        key=lambda a: (len(a.submission), a.attempt_index),
    )
    return PassRateSummary(
        problem_id=attempts[0].problem_id,
        attempts_m=m,
        pass_rate=Fraction(rewards, m),
        solved_examples=tuple(a.submission for a in solved[:2]),
        failed_examples=tuple(a.submission for a in failed[:2]),
    )


def progression_directive(p) -> Directive:
    """Difficulty adjustment from the previous pass rate.

    The boundary sits exactly at 0.65: a pass rate of 0.65 still targets
    the medium band, anything above asks for a harder problem.
    """
    rate = as_pass_rate(p)
    if rate > HARDER_THRESHOLD:
        return Directive.MAKE_HARDER
    if rate == 0:
        return Directive.MAKE_EASIER
    return Directive.TARGET_MEDIUM


def progression_text(directive: Directive) -> str:
    return load_template(f"progression_{directive.value}")


@dataclass
class SessionState:
    """Conditioning context carried between turns of one seed."""

    seed: SeedSnippet
    prev_problem: Optional[ProblemSpec] = None
    prev_summary: Optional[PassRateSummary] = None


def render_teacher_prompt(state: SessionState, env: EnvKind) -> str:
    input_count = envs.expected_input_count(env)
    if state.prev_problem is None or state.prev_summary is None:
        return render_template(
            load_template("teacher_turn1"),
            env_name=env.value,
            env_rules=load_template(f"env_rules_{env.value}"),
            seed_snippet=state.seed.text,
            input_count=input_count,
        )
    summary = state.prev_summary
    solved = "".join(
        f"\nExample solved {i}:\n\n{text}\n"
        for i, text in enumerate(summary.solved_examples, 1)
    )
    failed = "".join(
        f"\nExample failed {i}:\n\n{text}\n"
        for i, text in enumerate(summary.failed_examples, 1)
    )
    directive = progression_directive(summary.pass_rate)
    return render_template(
        load_template("teacher_turnn"),
        previous_problem=envs.render_problem_for_teacher(state.prev_problem),
        attempts_m=summary.attempts_m,
        pass_rate=render_pass_rate(summary.pass_rate),
        solved_examples=solved,
        failed_examples=failed,
        progression_strategy=progression_text(directive),
        input_count=input_count,
    )


def collect_attempts(
    problem: ProblemSpec,
    student: CompletionBackend,
    executor: Executor,
    cfg: PipelineConfig,
    student_params: CompletionParams = STUDENT_DEFAULTS,
    session_log: Optional[str] = None,
) -> list[AttemptRecord]:
    """Fan out M student attempts and grade each one.

    Records keep their submission-slot index regardless of completion
    order, so reruns produce identically ordered attempt lists.
    """
    prompt = envs.render_student_prompt(envs.build_student_view(problem))

    def one_attempt(index: int) -> AttemptRecord:
        completion = student.complete(prompt, student_params)
        if session_log:
            log_completion(session_log, "student", prompt, completion)
        submission = envs.extract_submission(problem.env, completion)
        grade = envs.grade_submission(submission, problem, executor, cfg.limits)
        return AttemptRecord(
            problem_id=problem.problem_id,
            attempt_index=index,
            submission=submission,
            reward=grade.reward,
            exec_status=grade.exec_status,
        )

    if cfg.concurrency == 1:
        return [one_attempt(i) for i in range(cfg.attempts_m)]
    with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
        return list(pool.map(one_attempt, range(cfg.attempts_m)))


def filter_candidate(
    problem: ProblemSpec,
    summary: PassRateSummary,
    dedup_index: DedupIndex,
    cfg: PipelineConfig,
) -> Optional[DropReason]:
    """None when the problem enters the dataset, else why it was dropped.

    The band is inclusive on both edges; a kept problem also registers its
    digest so later byte-different but normalization-identical candidates
    are rejected.
    """
    low, high = cfg.filter_band
    if summary.pass_rate < low:
        return DropReason.TOO_HARD
    if summary.pass_rate > high:
        return DropReason.TOO_EASY
    if not dedup_index.check_and_insert(problem.dedup_digest):
        return DropReason.DUPLICATE
    return None


def run_turn(
    state: SessionState,
    teacher: CompletionBackend,
    student: CompletionBackend,
    executor: Executor,
    cfg: PipelineConfig,
    dedup_index: DedupIndex,
    rng: random.Random,
    *,
    turn_index: int,
    teacher_params: CompletionParams = TEACHER_DEFAULTS,
    student_params: CompletionParams = STUDENT_DEFAULTS,
    session_log: Optional[str] = None,
) -> TurnOutcome:
    """One teacher turn: prompt, parse, materialize, grade, filter.

    Teacher-side failures produce a dropped outcome rather than aborting;
    backend errors propagate to the caller.
    """
    prompt = render_teacher_prompt(state, cfg.env)
    completion = teacher.complete(prompt, teacher_params)
    if session_log:
        log_completion(session_log, "teacher", prompt, completion)

    try:
        draft = envs.parse_teacher_output(completion)
    except envs.TeacherParseError as exc:
        log.info("turn %d dropped: %s", turn_index, exc)
        return TurnOutcome(
            turn_index=turn_index, kept=False, drop_reason=DropReason.PARSE_FAIL, detail=str(exc)
        )

    parent_id = state.prev_problem.problem_id if state.prev_problem else None
    try:
        problem = envs.materialize_problem(
            draft,
            cfg.env,
            executor,
            problem_id=new_id(rng),
            seed_id=state.seed.seed_id,
            turn_index=turn_index,
            parent_id=parent_id,
            limits=cfg.limits,
        )
    except envs.NondeterministicProblem as exc:
        return TurnOutcome(
            turn_index=turn_index,
            kept=False,
            drop_reason=DropReason.NONDETERMINISTIC,
            detail=str(exc),
        )
    except envs.MaterializeError as exc:
        return TurnOutcome(
            turn_index=turn_index, kept=False, drop_reason=DropReason.EXEC_FAIL, detail=str(exc)
        )

    attempts = collect_attempts(problem, student, executor, cfg, student_params, session_log)
    summary = summarize_attempts(attempts, cfg.attempts_m)
    problem = envs.with_grading(problem, summary.pass_rate)

    drop_reason = filter_candidate(problem, summary, dedup_index, cfg)
    return TurnOutcome(
        turn_index=turn_index,
        kept=drop_reason is None,
        problem=problem,
        summary=summary,
        drop_reason=drop_reason,
        attempts=tuple(attempts),
    )


def run_seed_session(
    seed: SeedSnippet,
    teacher: CompletionBackend,
    student: CompletionBackend,
    executor: Executor,
    cfg: PipelineConfig,
    dedup_index: Optional[DedupIndex] = None,
    rng: Optional[random.Random] = None,
    session_log: Optional[str] = None,
) -> list[TurnOutcome]:
    """Walk one seed through all turns; exactly turns_per_seed outcomes.

    Turn 1 gets retried until a problem materializes (turn1_retries extra
    tries), because without it there is nothing to condition on; the seed
    is aborted when those run out. Later failed turns are logged and the
    loop moves on, reusing the last materialized problem as context.
    """
    dedup_index = dedup_index if dedup_index is not None else DedupIndex()
    rng = rng if rng is not None else random.Random(cfg.rng_seed)
    state = SessionState(seed=seed)
    outcomes: list[TurnOutcome] = []

    first = run_turn(
        state, teacher, student, executor, cfg, dedup_index, rng,
        turn_index=1, session_log=session_log,
    )
    retries_left = cfg.turn1_retries
    while first.problem is None and retries_left > 0:
        retries_left -= 1
        first = run_turn(
            state, teacher, student, executor, cfg, dedup_index, rng,
            turn_index=1, session_log=session_log,
        )
    if first.problem is None:
        raise SeedAborted(f"seed {seed.seed_id}: no valid turn-1 problem")
    outcomes.append(first)
    state.prev_problem, state.prev_summary = first.problem, first.summary

    for turn_index in range(2, cfg.turns_per_seed + 1):
        outcome = run_turn(
            state, teacher, student, executor, cfg, dedup_index, rng,
            turn_index=turn_index, session_log=session_log,
        )
        outcomes.append(outcome)
        if outcome.problem is not None and outcome.summary is not None:
            state.prev_problem, state.prev_summary = outcome.problem, outcome.summary
    return outcomes


@dataclass
class GenerationReport:
    outcomes: list[TurnOutcome] = field(default_factory=list)
    kept: list[ProblemSpec] = field(default_factory=list)
    aborted_seeds: int = 0

    @property
    def drop_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for outcome in self.outcomes:
            if outcome.drop_reason is not None:
                key = outcome.drop_reason.value
                counts[key] = counts.get(key, 0) + 1
        return counts


def run_generation(
    corpus_text: str,
    teacher: CompletionBackend,
    student: CompletionBackend,
    executor: Executor,
    cfg: PipelineConfig,
    n_seeds: int,
    session_log: Optional[str] = None,
) -> GenerationReport:
    """Sample n seeds and run a session for each.

    Sessions run sequentially here; within each session the M attempts fan
    out per cfg.concurrency. Sequential sessions keep scripted runs
    bit-reproducible, and executor-bound work dominates wall time anyway.
    """
    rng = random.Random(cfg.rng_seed)
    dedup_index = DedupIndex()
    report = GenerationReport()
    for _ in range(n_seeds):
        seed = sample_seed(corpus_text, rng)
        try:
            outcomes = run_seed_session(
                seed, teacher, student, executor, cfg, dedup_index, rng, session_log
            )
        except SeedAborted:
            report.aborted_seeds += 1
            if session_log:
                _log_event(session_log, {"event": "seed_aborted", "seed_id": seed.seed_id})
            continue
        report.outcomes.extend(outcomes)
        for outcome in outcomes:
            if session_log:
                _log_event(
                    session_log,
                    {
                        "event": "turn",
                        "seed_id": seed.seed_id,
                        "turn_index": outcome.turn_index,
                        "kept": outcome.kept,
                        "drop_reason": outcome.drop_reason.value if outcome.drop_reason else None,
                        "problem_id": outcome.problem.problem_id if outcome.problem else None,
                        "pass_rate": render_pass_rate(outcome.summary.pass_rate)
                        if outcome.summary
                        else None,
                    },
                )
            if outcome.kept and outcome.problem is not None:
                report.kept.append(outcome.problem)
    return report


def _log_event(path: str, event: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(event, ensure_ascii=False) + "\n")
