"""The four problem environments: parsing, materialization, views, rewards.

Environment contracts (r is the binary reward for one submission):

* induction — student writes ``f`` from a message plus the first k' of k
  input-output pairs; r = 1 iff the candidate matches the gold output on
  every input, including the held-out private ones.
* abduction — student sees ``f`` and an output; r = 1 iff ``f`` applied to
  the candidate input reproduces it. Any preimage counts, not only the
  input the teacher used.
* deduction — student sees ``f`` and an input; r = 1 iff the candidate
  literal's canonical form equals the gold canonical form. Comparison is
  value-level after canonicalization, so key order never matters, but
  numeric kind does: ``20`` does not match a gold ``20.0``.
* fuzzing — student sees ``f``, ``pre_test_f`` and ``test_f``; r = 1 iff
  the candidate passes the pre-test and makes the test fail. "Fail" means
  test_f returned the boolean False or raised (assertion or otherwise);
  an error inside pre_test_f counts as the pre-test not passing.

Everything here is pure logic over the Executor interface.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Optional, Union

from . import canonical as canon
from .model import (
    AttemptStatus,
    EnvKind,
    ExecStatus,
    ExecutionResult,
    InvariantError,
    ProblemSpec,
    attempt_status_of,
)
from .prompts import load_template, render_template
from .recordio import content_digest
from .sandbox import ExecLimits, Executor

INPUTS_PER_INDUCTION = 5
INPUTS_PER_SINGLE = 1

# The parse-failure wording students of this pipeline see in their logs;
# kept stable because downstream tooling greps for it.
NO_MESSAGE_TEXT = "No message found! Make sure to correctly format the message."


class TeacherParseError(ValueError):
    """Teacher emission is missing a required fenced block."""

    tag = "unknown"


class MissingCode(TeacherParseError):
    tag = "python"


class MissingInputs(TeacherParseError):
    tag = "input"


class MissingMessage(TeacherParseError):
    tag = "message"


class MaterializeError(ValueError):
    """A draft could not be turned into a graded problem."""


class GoldExecutionFailed(MaterializeError):
    def __init__(self, input_index: int, result: ExecutionResult):
        super().__init__(
            f"gold execution failed on input {input_index}: "
            f"{result.status.value}: {result.error_text or ''}"
        )
        self.input_index = input_index
        self.result = result


class NondeterministicProblem(MaterializeError):
    def __init__(self, input_index: int):
        super().__init__(f"two runs on input {input_index} disagreed")
        self.input_index = input_index


class MissingTestFunctions(MaterializeError):
    def __init__(self, entry: str):
        super().__init__(f"fuzzing code does not define {entry}")
        self.entry = entry


@dataclass(frozen=True)
class TeacherDraft:
    """Parsed teacher emission, not yet executed."""

    code: str
    input_literals: tuple[str, ...]
    message: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_literals", tuple(self.input_literals))
        if not self.code.strip():
            raise InvariantError("draft code is empty")
        if not self.input_literals:
            raise InvariantError("draft has no inputs")
        if not self.message.strip():
            raise InvariantError("draft message is empty")


@dataclass(frozen=True)
class StudentView:
    """Exactly what the student prompt template may consume.

    The induction view carries the first visible_k pairs and never any
    private gold output.
    """

    env: EnvKind
    message: str = ""
    visible_pairs: tuple[tuple[str, str], ...] = ()
    code: str = ""
    gold_output: str = ""
    input_literal: str = ""


def _fenced_blocks(text: str, tag: str) -> list[str]:
    pattern = re.compile(r"```" + re.escape(tag) + r"[ \t]*\n(.*?)```", re.DOTALL)
    return [m.group(1).strip() for m in pattern.finditer(text)]


def parse_teacher_output(text: str) -> TeacherDraft:
    """Extract code, inputs, and message from a raw teacher completion.

    Reasoning preambles and prose between blocks are ignored. The last
    ```python``` block wins (teachers often sketch code while thinking);
    every ```input``` block is kept in order.
    """
    code_blocks = _fenced_blocks(text, "python")
    if not code_blocks or not code_blocks[-1].strip():
        raise MissingCode("no ```python``` code block found")
    inputs = [block for block in _fenced_blocks(text, "input") if block.strip()]
    if not inputs:
        raise MissingInputs("no ```input``` blocks found")
    messages = [block for block in _fenced_blocks(text, "message") if block.strip()]
    if not messages:
        raise MissingMessage(NO_MESSAGE_TEXT)
    return TeacherDraft(
        code=code_blocks[-1], input_literals=tuple(inputs), message=messages[-1]
    )


def expected_input_count(env: EnvKind) -> int:
    return INPUTS_PER_INDUCTION if env is EnvKind.INDUCTION else INPUTS_PER_SINGLE


def default_visible_k(k: int) -> int:
    """Visible pair count for induction: 3, but always leaving >= 1 private."""
    return min(3, k - 1)


def materialize_problem(
    draft: TeacherDraft,
    env: EnvKind,
    executor: Executor,
    *,
    problem_id: str,
    seed_id: str,
    turn_index: int = 1,
    parent_id: Optional[str] = None,
    limits: Optional[ExecLimits] = None,
) -> ProblemSpec:
    """Execute the draft to obtain gold outputs and build the problem.

    Every gold output comes from actually running ``f``; teacher-claimed
    outputs are never trusted. Each input is also double-run in fresh
    workers to reject nondeterministic problems, and fuzzing drafts must
    define both test functions.
    """
    inputs = draft.input_literals
    if env is EnvKind.INDUCTION:
        if len(inputs) < 2:
            raise MaterializeError("induction needs at least 2 inputs for private tests")
        visible_k: Optional[int] = default_visible_k(len(inputs))
    else:
        if len(inputs) != 1:
            inputs = inputs[:1]
        visible_k = None

    gold: list[str] = []
    for idx, literal in enumerate(inputs):
        result = executor.run_function(draft.code, "f", literal, limits)
        if not result.ok:
            raise GoldExecutionFailed(idx, result)
        gold.append(result.output_canonical or "")
    for idx, literal in enumerate(inputs):
        if not executor.determinism_check(draft.code, "f", literal, limits):
            raise NondeterministicProblem(idx)

    if env is EnvKind.FUZZING:
        for entry in ("pre_test_f", "test_f"):
            probe = executor.run_function(draft.code, entry, inputs[0], limits)
            if probe.status is ExecStatus.EXCEPTION and _is_entry_missing(probe):
                raise MissingTestFunctions(entry)

    return ProblemSpec(
        problem_id=problem_id,
        env=env,
        code=draft.code,
        message=draft.message,
        inputs=tuple(inputs),
        gold_outputs=tuple(gold),
        visible_k=visible_k,
        seed_id=seed_id,
        turn_index=turn_index,
        parent_id=parent_id,
        dedup_digest=content_digest(draft.code, draft.message),
    )


def _is_entry_missing(result: ExecutionResult) -> bool:
    return bool(result.error_text) and "entry not found" in result.error_text


def build_student_view(problem: ProblemSpec) -> StudentView:
    """Project a problem onto what the student is allowed to see."""
    if problem.env is EnvKind.INDUCTION:
        k = problem.visible_k or 0
        pairs = tuple(zip(problem.inputs[:k], problem.gold_outputs[:k]))
        return StudentView(env=problem.env, message=problem.message, visible_pairs=pairs)
    if problem.env is EnvKind.ABDUCTION:
        return StudentView(env=problem.env, code=problem.code, gold_output=problem.gold_output)
    if problem.env is EnvKind.DEDUCTION:
        return StudentView(env=problem.env, code=problem.code, input_literal=problem.inputs[0])
    return StudentView(env=problem.env, code=problem.code)  # fuzzing: all three functions


def render_student_prompt(view: StudentView) -> str:
    template = load_template(f"student_{view.env.value}")
    if view.env is EnvKind.INDUCTION:
        pairs = "\n".join(
            f"```input\n{i}\n```\n```output\n{o}\n```" for i, o in view.visible_pairs
        )
        return render_template(template, message=view.message, visible_pairs=pairs)
    if view.env is EnvKind.ABDUCTION:
        return render_template(template, code=view.code, gold_output=view.gold_output)
    if view.env is EnvKind.DEDUCTION:
        return render_template(template, code=view.code, input=view.input_literal)
    return render_template(template, code=view.code)


def extract_submission(env: EnvKind, completion: str) -> str:
    """Pull the student's answer out of a raw completion.

    Falls back to the stripped completion when the expected fenced block is
    absent; grading then decides what that text is worth.
    """
    tag = {
        EnvKind.INDUCTION: "python",
        EnvKind.ABDUCTION: "input",
        EnvKind.DEDUCTION: "output",
        EnvKind.FUZZING: "input",
    }[env]
    blocks = _fenced_blocks(completion, tag)
    return blocks[-1] if blocks else completion.strip()


@dataclass(frozen=True)
class Grade:
    """Binary reward plus how the submission's execution went."""

    reward: int
    exec_status: AttemptStatus

    def __post_init__(self) -> None:
        if self.reward not in (0, 1):
            raise InvariantError("reward must be 0 or 1")


_PASS = Grade(1, AttemptStatus.OK)


def _fail(status: AttemptStatus = AttemptStatus.OK) -> Grade:
    return Grade(0, status)


def reward_induction(
    candidate_code: str,
    problem: ProblemSpec,
    executor: Executor,
    limits: Optional[ExecLimits] = None,
) -> Grade:
    """Run the candidate on all inputs, private ones included."""
    _require_env(problem, EnvKind.INDUCTION)
    if not candidate_code.strip():
        return _fail(AttemptStatus.PARSE_ERROR)
    for literal, gold in zip(problem.inputs, problem.gold_outputs):
        result = executor.run_function(candidate_code, "f", literal, limits)
        if not result.ok:
            return _fail(attempt_status_of(result.status))
        if result.output_canonical != gold:
            return _fail()
    return _PASS


def reward_abduction(
    candidate_input_literal: str,
    problem: ProblemSpec,
    executor: Executor,
    limits: Optional[ExecLimits] = None,
) -> Grade:
    """Accept any preimage: r = 1 iff f(candidate) equals the gold output."""
    _require_env(problem, EnvKind.ABDUCTION)
    probe = executor.eval_literal(candidate_input_literal, limits)
    if not probe.ok:
        return _fail(AttemptStatus.PARSE_ERROR)
    result = executor.run_function(problem.code, "f", candidate_input_literal, limits)
    if not result.ok:
        return _fail(attempt_status_of(result.status))
    if result.output_canonical != problem.gold_output:
        return _fail()
    return _PASS


def reward_deduction(
    candidate_output_literal: str,
    problem: ProblemSpec,
    executor: Executor,
    limits: Optional[ExecLimits] = None,
) -> Grade:
    """Compare candidate and gold as canonicalized values."""
    _require_env(problem, EnvKind.DEDUCTION)
    result = executor.eval_literal(candidate_output_literal, limits)
    if not result.ok:
        return _fail(AttemptStatus.PARSE_ERROR)
    if result.output_canonical != problem.gold_output:
        return _fail()
    return _PASS


def reward_fuzzing(
    candidate_input_literal: str,
    problem: ProblemSpec,
    executor: Executor,
    limits: Optional[ExecLimits] = None,
) -> Grade:
    """r = 1 iff the pre-test passes and the test fails on the candidate."""
    _require_env(problem, EnvKind.FUZZING)
    probe = executor.eval_literal(candidate_input_literal, limits)
    if not probe.ok:
        return _fail(AttemptStatus.PARSE_ERROR)
    pre = executor.run_function(problem.code, "pre_test_f", candidate_input_literal, limits)
    if not pre.ok or not canon.is_truthy_canonical(pre.output_canonical or ""):
        return _fail(attempt_status_of(pre.status) if not pre.ok else AttemptStatus.OK)
    test = executor.run_function(problem.code, "test_f", candidate_input_literal, limits)
    if test.status is ExecStatus.EXCEPTION:
        return _PASS  # the bug surfaced as a raise
    if test.ok and test.output_canonical == "False":
        return _PASS  # the bug surfaced as an explicit False
    if test.status is ExecStatus.TIMEOUT:
        return _fail(AttemptStatus.TIMEOUT)
    return _fail()


def grade_submission(
    submission: str,
    problem: ProblemSpec,
    executor: Executor,
    limits: Optional[ExecLimits] = None,
) -> Grade:
    """Dispatch to the environment's reward function."""
    grader = {
        EnvKind.INDUCTION: reward_induction,
        EnvKind.ABDUCTION: reward_abduction,
        EnvKind.DEDUCTION: reward_deduction,
        EnvKind.FUZZING: reward_fuzzing,
    }[problem.env]
    return grader(submission, problem, executor, limits)


def _require_env(problem: ProblemSpec, env: EnvKind) -> None:
    if problem.env is not env:
        raise InvariantError(f"expected a {env.value} problem, got {problem.env.value}")


def render_problem_for_teacher(problem: ProblemSpec) -> str:
    """The previous-problem block fed back to the teacher on later turns."""
    parts = [f"```python\n{problem.code}\n```"]
    for literal, gold in zip(problem.inputs, problem.gold_outputs):
        parts.append(f"```input\n{literal}\n```\n```output\n{gold}\n```")
    parts.append(f"```message\n{problem.message}\n```")
    return "\n\n".join(parts)


def with_grading(problem: ProblemSpec, pass_rate, bin_label=None) -> ProblemSpec:
    """A copy of the problem with its measured difficulty attached."""
    return replace(problem, pass_rate=pass_rate, bin_label=bin_label)


EnvName = Union[str, EnvKind]


def env_kind(name: EnvName) -> EnvKind:
    if isinstance(name, EnvKind):
        return name
    try:
        return EnvKind(name.lower())
    except ValueError:
        raise InvariantError(f"unknown environment: {name!r}") from None
