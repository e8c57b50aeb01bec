"""Curriculum schedules and the step-indexed difficulty-split sampler.

Five presets ship in the config asset, all with a 40 000-step horizon:

* ``soft`` / ``hard`` — gradual vs. abrupt easy->medium->hard transitions.
* ``classic`` — conventional easy->medium->hard over five stages.
* ``reverse`` — the same five stages walked hard->medium->easy.
* ``reverse-medium-start`` — medium first, then the easy-medium split; its
  "easy" role is bound to the easy-medium split, which is just a different
  split label, not a special case.

Stages are half-open [start, end): the step shared by two consecutive
table rows belongs to the later stage. ``uniform_schedule`` builds the
no-curriculum baseline (one stage, equal weights).
"""

from __future__ import annotations

import bisect
import json
import random
from importlib import resources
from typing import Mapping, Sequence

from .model import CurriculumSchedule, InvariantError, ScheduleStage

DEFAULT_HORIZON = 40000
WEIGHT_TOLERANCE = 1e-9

PRESET_NAMES = ("soft", "hard", "classic", "reverse", "reverse-medium-start")


class StepOutOfRange(IndexError):
    """Requested step falls outside every stage of the schedule."""


SplitWeights = Mapping[str, float]


def _check_weights(weights: SplitWeights, splits: Sequence[str]) -> list[str]:
    problems = []
    if set(weights) != set(splits):
        problems.append(
            f"weights key set {sorted(weights)} != declared splits {sorted(splits)}"
        )
    if any(w < 0 for w in weights.values()):
        problems.append("negative weight")
    total = sum(weights.values())
    if abs(total - 1.0) > WEIGHT_TOLERANCE:
        problems.append(f"weights sum to {total!r}, not 1")
    return problems


def validate_schedule(schedule: CurriculumSchedule, horizon: int) -> list[str]:
    """Every structural violation, empty when the schedule is sound."""
    violations: list[str] = []
    if not schedule.stages:
        return [f"no stages; need coverage of [0, {horizon})"]
    stages = sorted(schedule.stages, key=lambda s: s.start_step)
    if stages[0].start_step != 0:
        violations.append(f"first stage starts at {stages[0].start_step}, not 0")
    for prev, nxt in zip(stages, stages[1:]):
        if nxt.start_step > prev.end_step:
            violations.append(f"gap: steps [{prev.end_step}, {nxt.start_step}) uncovered")
        elif nxt.start_step < prev.end_step:
            violations.append(f"overlap: stages at {prev.start_step} and {nxt.start_step}")
    if stages[-1].end_step != horizon:
        violations.append(
            f"last stage ends at {stages[-1].end_step}, horizon is {horizon}"
        )
    for stage in stages:
        if stage.end_step <= stage.start_step:
            violations.append(f"empty stage [{stage.start_step}, {stage.end_step})")
        for problem in _check_weights(stage.weights, schedule.splits):
            violations.append(f"stage [{stage.start_step}, {stage.end_step}): {problem}")
    return violations


def stage_weights(schedule: CurriculumSchedule, step: int) -> dict[str, float]:
    """Weights of the stage owning ``step`` (stages are half-open)."""
    for stage in schedule.stages:
        if stage.start_step <= step < stage.end_step:
            return dict(stage.weights)
    raise StepOutOfRange(
        f"step {step} outside schedule {schedule.name!r} "
        f"(horizon {schedule.horizon})"
    )


def sample_split(weights: SplitWeights, rng: random.Random, splits: Sequence[str] | None = None) -> str:
    """Inverse-CDF draw over labels in declared order.

    ``splits`` pins the label order; without it, the mapping's own order is
    used. The draw consumes exactly one rng value, so sequences reproduce.
    """
    order = list(splits) if splits is not None else list(weights)
    cumulative = []
    total = 0.0
    for label in order:
        total += weights[label]
        cumulative.append(total)
    if total <= 0:
        raise InvariantError("weights sum to zero")
    point = rng.random() * total
    index = bisect.bisect_right(cumulative, point)
    return order[min(index, len(order) - 1)]


class SplitSampler:
    """Step-indexed sampler owning its rng; one consumer per instance."""

    def __init__(self, schedule: CurriculumSchedule, rng_seed: int = 0):
        self.schedule = schedule
        self._rng = random.Random(rng_seed)

    def sample(self, step: int) -> str:
        return sample_split(stage_weights(self.schedule, step), self._rng, self.schedule.splits)


def _load_schedule(name: str, spec: dict) -> CurriculumSchedule:
    stages = tuple(
        ScheduleStage(
            start_step=stage["start"],
            end_step=stage["end"],
            weights={k: float(v) for k, v in stage["weights"].items()},
        )
        for stage in spec["stages"]
    )
    return CurriculumSchedule(name=name, splits=tuple(spec["splits"]), stages=stages)


def schedule_preset(name: str) -> CurriculumSchedule:
    path = resources.files("codeforge").joinpath("assets/presets.json")
    with path.open("r", encoding="utf-8") as fh:
        presets = json.load(fh)["schedules"]
    if name not in presets:
        raise InvariantError(
            f"unknown schedule preset: {name!r} (have {sorted(presets)})"
        )
    schedule = _load_schedule(name, presets[name])
    violations = validate_schedule(schedule, schedule.horizon)
    if violations:
        raise InvariantError(f"preset {name} is malformed: {violations}")
    return schedule


def uniform_schedule(
    splits: Sequence[str] = ("easy", "medium", "hard"), horizon: int = DEFAULT_HORIZON
) -> CurriculumSchedule:
    """No-curriculum baseline: one stage, equal weights over the splits."""
    weight = 1.0 / len(splits)
    return CurriculumSchedule(
        name="uniform",
        splits=tuple(splits),
        stages=(ScheduleStage(start_step=0, end_step=horizon, weights={s: weight for s in splits}),),
    )
