"""Shared test fixtures: reference guest code and fake-executor seeding.

``seed_fake`` is the independent oracle route: it executes fixture code
directly in the test process (all fixture code is ours) and registers the
observed outcomes in a FakeExecutor table. Grading logic under test then
consults the table, never the oracle.
"""

from __future__ import annotations

import random
from fractions import Fraction

from codeforge import canonical as canon
from codeforge.model import (
    DifficultyLabel,
    EnvKind,
    ExecStatus,
    ExecutionResult,
    ProblemSpec,
)
from codeforge.modelclient import ScriptedFixture
from codeforge.sandbox import FakeExecutor


def run_host(code: str, entry: str, args_literal: str) -> ExecutionResult:
    """Execute fixture code in-process and shape the outcome like a worker."""
    namespace: dict = {}
    try:
        exec(code, namespace)  # fixture code only, authored in this repo
        fn = namespace[entry]
        value = fn(*canon.parse_args(args_literal))
        return ExecutionResult(status=ExecStatus.OK, output_canonical=canon.canonical(value))
    except KeyError:
        return ExecutionResult(
            status=ExecStatus.EXCEPTION, error_text=f"NameError: entry not found: {entry}"
        )
    except Exception as exc:  # noqa: BLE001 - mirror worker behavior
        return ExecutionResult(
            status=ExecStatus.EXCEPTION, error_text=f"{type(exc).__name__}: {exc}"
        )


def seed_fake(fake: FakeExecutor, code: str, entries: dict[str, list[str]]) -> None:
    """Register host-executed outcomes for every (entry, args) pair."""
    for entry, args_list in entries.items():
        for args_literal in args_list:
            fake.register(code, entry, args_literal, run_host(code, entry, args_literal))


def make_problem(
    env: EnvKind = EnvKind.DEDUCTION,
    *,
    problem_id: str = "p-0001",
    code: str = "def f(x):\n    return x\n",
    message: str = "Echo the input value.",
    inputs: tuple[str, ...] = ("1",),
    gold_outputs: tuple[str, ...] = ("1",),
    visible_k=None,
    seed_id: str = "seed-0001",
    turn_index: int = 1,
    parent_id=None,
    pass_rate=None,
    bin_label=None,
    dedup_digest: str = "",
) -> ProblemSpec:
    if env is EnvKind.INDUCTION and visible_k is None:
        visible_k = min(3, len(inputs) - 1)
    return ProblemSpec(
        problem_id=problem_id,
        env=env,
        code=code,
        message=message,
        inputs=inputs,
        gold_outputs=gold_outputs,
        visible_k=visible_k,
        seed_id=seed_id,
        turn_index=turn_index,
        parent_id=parent_id,
        pass_rate=pass_rate,
        bin_label=bin_label,
        dedup_digest=dedup_digest or f"digest-{problem_id}",
    )


# --- reference guest programs ------------------------------------------------

# Multi-turn transcript fixture: schedule pending resources under a time
# limit and a cost budget, with mandatory deps, optional cost discounts,
# and per-resource deadlines. Unknown dependency names make the instance
# unsolvable.
RESOURCE_CODE = '''\
from typing import Dict, List, Tuple

def f(resources: Dict[str, Tuple[str, List[str], List[Tuple[str, int]], int, int, int]],
      timeout: int, budget: int) -> bool:
    names = list(resources.keys())
    n = len(names)
    idx = {name: i for i, name in enumerate(names)}

    status = [None] * n
    mand = [set() for _ in range(n)]
    opt = [[] for _ in range(n)]          # (dep_idx, discount)
    run = [0] * n
    base_cost = [0] * n
    deadline = [0] * n

    for name, (st, md, od, rt, bc, dl) in resources.items():
        i = idx[name]
        status[i] = st
        for d in md:
            if d not in idx:          # unknown mandatory dependency
                return False
            mand[i].add(idx[d])
        for d, disc in od:
            if d not in idx:          # unknown optional dependency
                return False
            opt[i].append((idx[d], disc))
        run[i] = rt
        base_cost[i] = bc
        deadline[i] = dl

    start_mask = 0
    for i, st in enumerate(status):
        if st == "Running":
            if deadline[i] < 0:
                return False
            start_mask |= 1 << i

    from collections import defaultdict
    frontier = defaultdict(list)
    frontier[start_mask].append((0, 0))

    full_mask = (1 << n) - 1

    for mask in range(1 << n):
        if mask not in frontier:
            continue
        cur_states = frontier[mask]

        for i in range(n):
            bit = 1 << i
            if mask & bit:
                continue

            if not mand[i].issubset({j for j in range(n) if mask & (1 << j)}):
                continue

            discount = sum(disc for dep_idx, disc in opt[i] if mask & (1 << dep_idx))
            eff_cost = max(0, base_cost[i] - discount)

            for cur_time, cur_spent in cur_states:
                finish_time = cur_time + run[i]
                if finish_time > deadline[i]:
                    continue
                new_spent = cur_spent + eff_cost
                if new_spent > budget:
                    continue

                new_mask = mask | bit
                improved = True
                to_remove = []
                for t, c in frontier[new_mask]:
                    if t <= finish_time and c <= new_spent:
                        improved = False
                        break
                    if t >= finish_time and c >= new_spent:
                        to_remove.append((t, c))
                if improved:
                    for itm in to_remove:
                        frontier[new_mask].remove(itm)
                    frontier[new_mask].append((finish_time, new_spent))

    for t, c in frontier[full_mask]:
        if t <= timeout and c <= budget:
            return True
    return False
'''

RESOURCE_INPUTS = (
    '{\n    "A": ("Running", [], [], 0, 0, 0),\n    "B": ("Pending", ["A"], [("A", 2)], 5, 6, 12),\n    "C": ("Pending", ["B"], [], 4, 5, 20)\n}, 15, 10',
    '{\n    "X": ("Pending", [], [("Y", 2)], 3, 5, 10),\n    "Y": ("Pending", [], [("X", 3)], 4, 6, 10)\n}, 8, 9',
    '{\n    "P": ("Pending", ["Q"], [], 4, 5, 10)\n}, 10, 10',
    '{\n    "A": ("Pending", [], [], 6, 5, 5),\n    "B": ("Pending", [], [], 1, 2, 10)\n}, 10, 10',
    '{\n    "A": ("Pending", [], [], 3, 7, 10),\n    "B": ("Pending", [], [], 4, 6, 10)\n}, 10, 10',
)

RESOURCE_MESSAGE = (
    "Determine whether all pending resources can be completed within a given "
    "overall time limit **and** a total cost budget, while respecting mandatory "
    "dependencies, optional cost discounts, and individual deadlines."
)

# Frozen from executing RESOURCE_CODE on its own inputs (see run_host).
RESOURCE_GOLD = ("True", "True", "False", "False", "False")

# A shortcut submission that ignores dependencies and budgets entirely: it
# sums the run-time field and compares against the limit.
RESOURCE_SHORTCUT_CODE = '''\
def f(task_dict, limit, budget):
    """Sums the fourth element (assumed duration) of each task tuple."""
    total_duration = sum(info[3] for info in task_dict.values())
    return total_duration <= limit
'''


def teacher_answer(code: str, inputs: tuple[str, ...], message: str, preamble: str = "") -> str:
    """Assemble a raw teacher completion with the expected fenced blocks."""
    parts = []
    if preamble:
        parts.append(preamble)
    parts.append(f"```python\n{code}\n```")
    for literal in inputs:
        parts.append(f"```input\n{literal}\n```")
    parts.append(f"```message\n{message}\n```")
    return "\n\n".join(parts)


RESOURCE_TEACHER_ANSWER = teacher_answer(
    RESOURCE_CODE,
    RESOURCE_INPUTS,
    RESOURCE_MESSAGE,
    preamble=(
        "Students previously shortcut the task by summing durations, so the new "
        "variant adds a cost budget with optional discounts that a naive sum "
        "cannot satisfy.\n\n<answer>"
    ),
)


# Bearing-chain fixture family: three related tasks over compass bearings.
ANGLE_EASY_CODE = '''\
def f(b1, b2):
    """Smallest angular distance between two compass bearings, one decimal."""
    d = abs(b1 - b2) % 360.0
    return round(min(d, 360.0 - d), 1)
'''

ANGLE_EASY_MESSAGE = (
    "Given two compass bearings in degrees, return the smallest angular "
    "distance between them (between 0 and 180), rounded to one decimal place. "
    "Mind the circular wrap-around at the 0/360 boundary."
)

ANGLE_MEDIUM_CODE = '''\
def f(bearings):
    """Size of the smallest angular sector covering all bearings, one decimal."""
    points = sorted(b % 360.0 for b in bearings)
    if len(points) <= 1:
        return 0.0
    best_gap = 360.0 - points[-1] + points[0]
    for a, b in zip(points, points[1:]):
        best_gap = max(best_gap, b - a)
    return round(360.0 - best_gap, 1)
'''

ANGLE_MEDIUM_MESSAGE = (
    "Given a list of compass bearings in degrees, find the smallest angular "
    "sector that covers them all. The sector may wrap around the 0/360 "
    "boundary. Return the sector size rounded to one decimal place."
)

ANGLE_HARD_CODE = '''\
def f(graph):
    """Per-node size of the smallest sector covering its outgoing bearings."""
    def sector(bearings):
        points = sorted(b % 360.0 for b in bearings)
        if len(points) <= 1:
            return 0.0
        best_gap = 360.0 - points[-1] + points[0]
        for a, b in zip(points, points[1:]):
            best_gap = max(best_gap, b - a)
        return round(360.0 - best_gap, 1)

    return {node: sector(bearings) for node, bearings in sorted(graph.items())}
'''

ANGLE_HARD_MESSAGE = (
    "Given a mapping from geographic nodes to the compass bearings of their "
    "outgoing edges, compute for each node the smallest angular sector that "
    "contains all of its bearings, handling wrap-around near 0/360 and "
    "returning exact degree spans."
)

# Buggy absolute value: f returns x unchanged, the pre-test admits only
# ints, and the test asserts nonnegativity. Any negative int exposes it.
FUZZ_ABS_CODE = '''\
def f(x):
    return x

def pre_test_f(x):
    return isinstance(x, int) and not isinstance(x, bool)

def test_f(x):
    assert f(x) >= 0
    return True
'''

FUZZ_ABS_MESSAGE = "Find an integer input for which the absolute-value helper misbehaves."

SQUARE_CODE = "def f(x):\n    return x * x\n"


def int_range_literals(low: int, high: int) -> list[str]:
    return [str(i) for i in range(low, high + 1)]


# --- scripted multi-turn generation session ----------------------------------


class SessionScript:
    """Builder for a fully scripted 3-seed generation run (induction, M=8).

    Produces the teacher fixture, the student fixture, a seeded fake
    executor, and the per-turn expectations the tests assert against.
    """

    WRONG_CODE = "def f(x):\n    return -1\n"
    M = 8

    def __init__(self) -> None:
        self.teacher = ScriptedFixture()
        self.student = ScriptedFixture()
        self.fake = FakeExecutor()
        self.expected: list[dict] = []  # per turn: seed_no, kind, solve_count
        self.exec_entries: list[tuple[str, str, str, ExecutionResult]] = []
        self._inputs = tuple(str(i) for i in range(5))
        self._build()

    @staticmethod
    def problem_code(seed_no: int, turn: int) -> str:
        a, b = 2 + seed_no, 3 + turn  # b never equals the wrong code's -1
        return f"def f(x):\n    return {a} * x + {b}\n"

    @staticmethod
    def problem_message(seed_no: int, turn: int) -> str:
        return (
            f"Recover the affine rule from seed {seed_no} variant {turn}: "
            "map each integer to a scaled and shifted value."
        )

    def _register_codes(self, code: str) -> None:
        for args_literal in self._inputs:
            result = run_host(code, "f", args_literal)
            self.fake.register(code, "f", args_literal, result)
            self.exec_entries.append((code, "f", args_literal, result))

    def _add_turn(self, seed_no: int, turn: int, solve_count: int, *, dup_of=None, parse_fail=False) -> None:
        if parse_fail:
            self.teacher.add(
                teacher_answer(self.problem_code(seed_no, turn), self._inputs, "x")
                .replace("```message\nx\n```", "(forgot the message block)"),
                times=1,
            )
            self.expected.append({"seed": seed_no, "turn": turn, "kind": "parse_fail"})
            return
        if dup_of is not None:
            base_code = self.problem_code(seed_no, dup_of)
            code = base_code + "  # appended remark\n"
            message = self.problem_message(seed_no, dup_of).upper() + "  "
        else:
            code = self.problem_code(seed_no, turn)
            message = self.problem_message(seed_no, turn)
        self.teacher.add(teacher_answer(code, self._inputs, message), times=1)
        self._register_codes(code)
        self._register_codes(self.WRONG_CODE)
        for i in range(self.M):
            answer_code = code if i < solve_count else self.WRONG_CODE
            self.student.add(f"My solution:\n```python\n{answer_code}\n```", times=1)
        p = Fraction(solve_count, self.M)
        if dup_of is not None:
            kind = "duplicate"
        elif p == 0:
            kind = "too_hard"
        elif p > Fraction(97, 100):
            kind = "too_easy"
        else:
            kind = "kept"
        self.expected.append(
            {"seed": seed_no, "turn": turn, "kind": kind, "pass_rate": p}
        )

    def _build(self) -> None:
        # seed 0: too-easy start, then a mix of kept and a zero-pass turn
        for turn, solves in ((1, 8), (2, 5), (3, 0), (4, 4), (5, 2), (6, 7)):
            self._add_turn(0, turn, solves)
        # seed 1: steady kept turns, a normalization-identical duplicate, a
        # too-easy finish
        self._add_turn(1, 1, 6)
        self._add_turn(1, 2, 3)
        self._add_turn(1, 3, 5)
        self._add_turn(1, 4, 4, dup_of=2)
        self._add_turn(1, 5, 1)
        self._add_turn(1, 6, 8)
        # seed 2: includes a parse failure mid-session
        self._add_turn(2, 1, 4)
        self._add_turn(2, 2, 0)
        self._add_turn(2, 3, 0, parse_fail=True)
        self._add_turn(2, 4, 6)
        self._add_turn(2, 5, 3)
        self._add_turn(2, 6, 5)

    @property
    def kept_expected(self) -> int:
        return sum(1 for e in self.expected if e["kind"] == "kept")

    def corpus(self, lines: int = 200) -> str:
        rng = random.Random(7)
        return "\n".join(
            f"value_{i:04d} = transform({rng.randint(0, 999)})" for i in range(lines)
        )


def fixture_file_lines(script: SessionScript) -> list[str]:
    """Serialize a SessionScript as CLI fixture-file lines."""
    import json

    lines = []
    for entry in script.teacher.entries:
        lines.append(
            json.dumps({"role": "teacher", "response": entry.response, "times": entry.times})
        )
    for entry in script.student.entries:
        lines.append(
            json.dumps({"role": "student", "response": entry.response, "times": entry.times})
        )
    for code, entry_name, args, result in script.exec_entries:
        obj = {
            "role": "exec",
            "code": code,
            "entry": entry_name,
            "args": args,
            "status": result.status.value,
        }
        if result.ok:
            obj["output"] = result.output_canonical
        else:
            obj["error"] = result.error_text
        lines.append(json.dumps(obj))
    return lines
