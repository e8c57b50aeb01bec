"""Post-generation dataset operations: binning, dedup, matching, chains.

Difficulty bins are closed intervals over exact pass rates. The two
shipped presets:

* ``appendix-b`` — easy 0.81-0.91, medium 0.41-0.59, hard 0.05-0.16, with
  deliberate gaps between bins (anything in a gap is unbinned).
* ``table-4`` — easy 0.85-0.97, easy-medium 0.61-0.85, medium 0.26-0.61,
  hard 0.10-0.26. Adjacent bins share endpoints; a shared endpoint belongs
  to the harder (lower) bin, which keeps the bins disjoint in effect.

Near-duplicate removal uses 5-gram token shingles with Jaccard similarity
over code+message; histogram matching equalizes per-bin counts between two
datasets by sampling down to the per-label minimum.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, replace
from fractions import Fraction
from importlib import resources
from typing import Iterable, Optional, Sequence

from . import environments as envs
from .model import (
    Chain,
    DifficultyLabel,
    EnvKind,
    InvariantError,
    ProblemSpec,
    as_pass_rate,
    new_id,
    render_pass_rate,
)
from .modelclient import CompletionBackend, log_completion
from .pipeline import PipelineConfig, collect_attempts, summarize_attempts
from .prompts import load_template, render_template
from .recordio import canonical_digest
from .sandbox import Executor



class ChainFailed(RuntimeError):
    """A chain level could not be generated inside its retry budget."""

    def __init__(self, level: DifficultyLabel, detail: str = ""):
        super().__init__(f"could not generate a {level.value} variant: {detail}")
        self.level = level


@dataclass(frozen=True)
class Bin:
    label: DifficultyLabel
    low: Fraction
    high: Fraction

    def __post_init__(self) -> None:
        low, high = as_pass_rate(self.low), as_pass_rate(self.high)
        if low > high:
            raise InvariantError(f"bin {self.label.value}: low {low} > high {high}")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    def contains(self, p: Fraction) -> bool:
        return self.low <= p <= self.high


@dataclass(frozen=True)
class BinConfig:
    name: str
    bins: tuple[Bin, ...]

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.bins, key=lambda b: b.low))
        for a, b in zip(ordered, ordered[1:]):
            if b.low < a.high:  # touching endpoints are fine, interior overlap is not
                raise InvariantError(
                    f"bins {a.label.value} and {b.label.value} overlap"
                )
        object.__setattr__(self, "bins", ordered)

    def labels(self) -> list[DifficultyLabel]:
        return [b.label for b in self.bins]


def _load_presets() -> dict:
    path = resources.files("codeforge").joinpath("assets/presets.json")
    with path.open("r", encoding="utf-8") as fh:
        return json.load(fh)


def bin_preset(name: str) -> BinConfig:
    """Load a named bin preset ("appendix-b" or "table-4")."""
    presets = _load_presets()["bin_presets"]
    if name not in presets:
        raise InvariantError(f"unknown bin preset: {name!r} (have {sorted(presets)})")
    bins = tuple(
        Bin(label=DifficultyLabel(spec["label"]), low=_dec(spec["low"]), high=_dec(spec["high"]))
        for spec in presets[name]["bins"]
    )
    return BinConfig(name=name, bins=bins)


def _dec(text: str) -> Fraction:
    """Exact fraction from a decimal string like '0.81'."""
    return Fraction(text)


def assign_bin(p, cfg: BinConfig) -> DifficultyLabel:
    """Label of the bin containing p, else UNBINNED.

    Bins are scanned from hardest (lowest) upward, so an endpoint shared by
    two Table-4-style bins resolves to the harder one.
    """
    rate = as_pass_rate(p)
    for bin_ in cfg.bins:
        if bin_.contains(rate):
            return bin_.label
    return DifficultyLabel.UNBINNED


def label_dataset(records: Iterable[ProblemSpec], cfg: BinConfig) -> list[ProblemSpec]:
    """Copies of the records with bin_label filled from their pass rate."""
    labeled = []
    for record in records:
        if record.pass_rate is None:
            labeled.append(replace(record, bin_label=DifficultyLabel.UNBINNED))
        else:
            labeled.append(replace(record, bin_label=assign_bin(record.pass_rate, cfg)))
    return labeled


# --- near-duplicate removal -------------------------------------------------

_TOKEN = re.compile(r"\w+")
SHINGLE_WIDTH = 5


def shingles(text: str, width: int = SHINGLE_WIDTH) -> frozenset[tuple[str, ...]]:
    """Set of token n-grams; short texts fall back to one short shingle."""
    tokens = _TOKEN.findall(text)
    if len(tokens) <= width:
        return frozenset([tuple(tokens)]) if tokens else frozenset()
    return frozenset(
        tuple(tokens[i : i + width]) for i in range(len(tokens) - width + 1)
    )


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def dedup_dataset(
    records: Sequence[ProblemSpec], jaccard_threshold: float = 0.9
) -> tuple[list[ProblemSpec], list[ProblemSpec]]:
    """(kept, dropped) with exact digests removed first, then near-dups.

    First occurrence wins and input order is preserved, which makes the
    operation idempotent. Near-dup comparison is against already-kept
    records only, using shingle sets of code+message.
    """
    kept: list[ProblemSpec] = []
    dropped: list[ProblemSpec] = []
    seen_digests: set[str] = set()
    kept_shingles: list[frozenset] = []
    for record in records:
        digest = record.dedup_digest or canonical_digest(record)
        if digest in seen_digests:
            dropped.append(record)
            continue
        sh = shingles(record.code + "\n" + record.message)
        near_dup = False
        for other in kept_shingles:
            # Size bound: Jaccard can't reach the threshold when sizes differ too much.
            if min(len(sh), len(other)) < jaccard_threshold * max(len(sh), len(other)):
                continue
            if jaccard(sh, other) >= jaccard_threshold:
                near_dup = True
                break
        if near_dup:
            dropped.append(record)
            continue
        seen_digests.add(digest)
        kept_shingles.append(sh)
        kept.append(record)
    return kept, dropped


# --- histogram matching -----------------------------------------------------


def match_histograms(
    a: Sequence[ProblemSpec],
    b: Sequence[ProblemSpec],
    cfg: BinConfig,
    rng: random.Random,
) -> tuple[list[ProblemSpec], list[ProblemSpec]]:
    """Sample both datasets down to identical per-bin counts.

    For each label both sides keep exactly min(count_a, count_b) records,
    chosen uniformly without replacement; unbinned records never survive.
    Output preserves each input's relative order.
    """

    def by_label(records: Sequence[ProblemSpec]) -> dict[DifficultyLabel, list[int]]:
        buckets: dict[DifficultyLabel, list[int]] = {}
        for i, record in enumerate(records):
            label = assign_bin(record.pass_rate, cfg) if record.pass_rate is not None else DifficultyLabel.UNBINNED
            buckets.setdefault(label, []).append(i)
        return buckets

    buckets_a, buckets_b = by_label(a), by_label(b)
    keep_a: set[int] = set()
    keep_b: set[int] = set()
    for label in cfg.labels():
        idx_a = buckets_a.get(label, [])
        idx_b = buckets_b.get(label, [])
        n = min(len(idx_a), len(idx_b))
        keep_a.update(rng.sample(idx_a, n))
        keep_b.update(rng.sample(idx_b, n))
    matched_a = [rec for i, rec in enumerate(a) if i in keep_a]
    matched_b = [rec for i, rec in enumerate(b) if i in keep_b]
    return matched_a, matched_b


# --- chain construction -----------------------------------------------------


@dataclass(frozen=True)
class ChainBuildConfig:
    attempts_m: int = 32
    max_regeneration_tries: int = 4
    bin_config: Optional[BinConfig] = None  # defaults to appendix-b
    pipeline: Optional[PipelineConfig] = None

    def __post_init__(self) -> None:
        if self.attempts_m < 1 or self.max_regeneration_tries < 1:
            raise InvariantError("chain config fields must be positive")

    def bins(self) -> BinConfig:
        return self.bin_config or bin_preset("appendix-b")


def _band_of(cfg: BinConfig, label: DifficultyLabel) -> Bin:
    for bin_ in cfg.bins:
        if bin_.label is label:
            return bin_
    raise InvariantError(f"bin config {cfg.name} has no {label.value} bin")


def _generate_level(
    parent: ProblemSpec,
    target: DifficultyLabel,
    teacher: CompletionBackend,
    student: CompletionBackend,
    executor: Executor,
    cfg: ChainBuildConfig,
    rng: random.Random,
    session_log: Optional[str] = None,
) -> ProblemSpec:
    """Ask for an easier variant until it grades into the target bin."""
    bins = cfg.bins()
    band = _band_of(bins, target)
    pipe_cfg = cfg.pipeline or PipelineConfig(env=parent.env, attempts_m=cfg.attempts_m)
    prompt = render_template(
        load_template("chain_easier"),
        previous_problem=envs.render_problem_for_teacher(parent),
        band_low=render_pass_rate(band.low),
        band_high=render_pass_rate(band.high),
        target_label=target.value,
        input_count=envs.expected_input_count(parent.env),
    )
    last_detail = "no attempt"
    for _ in range(cfg.max_regeneration_tries):
        completion = teacher.complete(prompt, params=_teacher_params())
        if session_log:
            log_completion(session_log, "teacher", prompt, completion)
        try:
            draft = envs.parse_teacher_output(completion)
            problem = envs.materialize_problem(
                draft,
                parent.env,
                executor,
                problem_id=new_id(rng),
                seed_id=parent.seed_id,
                turn_index=parent.turn_index + 1,
                parent_id=parent.problem_id,
                limits=pipe_cfg.limits,
            )
        except (envs.TeacherParseError, envs.MaterializeError) as exc:
            last_detail = str(exc)
            continue
        attempts = collect_attempts(problem, student, executor, pipe_cfg, session_log=session_log)
        summary = summarize_attempts(attempts, pipe_cfg.attempts_m)
        label = assign_bin(summary.pass_rate, bins)
        if label is target:
            return envs.with_grading(problem, summary.pass_rate, bin_label=label)
        last_detail = f"graded {render_pass_rate(summary.pass_rate)} -> {label.value}"
    raise ChainFailed(target, last_detail)


def _teacher_params():
    from .modelclient import TEACHER_DEFAULTS

    return TEACHER_DEFAULTS


def build_chain(
    hard: ProblemSpec,
    teacher: CompletionBackend,
    student: CompletionBackend,
    executor: Executor,
    cfg: Optional[ChainBuildConfig] = None,
    rng: Optional[random.Random] = None,
    session_log: Optional[str] = None,
) -> Chain:
    """Reverse construction: hard problem in, validated chain out.

    The teacher is explicitly prompted for progressively easier variants,
    each graded with M attempts and accepted only if it lands in its
    target bin (medium first, then easy from the accepted medium).
    """
    cfg = cfg or ChainBuildConfig()
    rng = rng or random.Random(0)
    bins = cfg.bins()
    if hard.pass_rate is None or assign_bin(hard.pass_rate, bins) is not DifficultyLabel.HARD:
        raise InvariantError(
            f"chain root must grade into the hard bin, got {hard.pass_rate}"
        )
    hard = replace(hard, bin_label=DifficultyLabel.HARD)
    medium = _generate_level(
        hard, DifficultyLabel.MEDIUM, teacher, student, executor, cfg, rng, session_log
    )
    easy = _generate_level(
        medium, DifficultyLabel.EASY, teacher, student, executor, cfg, rng, session_log
    )
    chain = Chain(chain_id=new_id(rng), hard=hard, medium=medium, easy=easy)
    violations = validate_chain(chain, bins)
    if violations:
        raise ChainFailed(DifficultyLabel.EASY, f"built chain failed checks: {violations}")
    return chain


def validate_chain(chain: Chain, bins: Optional[BinConfig] = None) -> list[str]:
    """Every violated chain condition, empty when coherent.

    Checks lineage (easy descends from medium descends from hard), bin
    membership per level, and strictly increasing pass rates hard ->
    medium -> easy.
    """
    bins = bins or bin_preset("appendix-b")
    violations: list[str] = []
    if chain.medium.parent_id != chain.hard.problem_id:
        violations.append("lineage: medium does not descend from hard")
    if chain.easy.parent_id != chain.medium.problem_id:
        violations.append("lineage: easy does not descend from medium")
    expected = (
        (chain.hard, DifficultyLabel.HARD),
        (chain.medium, DifficultyLabel.MEDIUM),
        (chain.easy, DifficultyLabel.EASY),
    )
    for problem, label in expected:
        if problem.pass_rate is None:
            violations.append(f"{label.value}: ungraded problem")
        elif assign_bin(problem.pass_rate, bins) is not label:
            violations.append(f"{label.value}: pass rate outside the {label.value} bin")
        if problem.bin_label is not label:
            violations.append(f"{label.value}: bin_label is {problem.bin_label}")
    rates = (chain.hard.pass_rate, chain.medium.pass_rate, chain.easy.pass_rate)
    if None not in rates and not (rates[0] < rates[1] < rates[2]):
        violations.append("ordering: pass rates not strictly increasing hard < medium < easy")
    return violations


# --- statistics -------------------------------------------------------------

HISTOGRAM_STEP = Fraction(5, 100)


def dataset_stats(records: Sequence[ProblemSpec]) -> dict:
    """Counts, a 0.05-granularity pass-rate histogram, and bin breakdowns."""
    per_env = {kind.value: 0 for kind in EnvKind}
    histogram = {f"{float(i * HISTOGRAM_STEP):.2f}": 0 for i in range(20)}
    digests: dict[str, int] = {}
    graded = 0
    for record in records:
        per_env[record.env.value] += 1
        digest = record.dedup_digest or canonical_digest(record)
        digests[digest] = digests.get(digest, 0) + 1
        if record.pass_rate is not None:
            graded += 1
            bucket = min(int(record.pass_rate / HISTOGRAM_STEP), 19)
            histogram[f"{float(bucket * HISTOGRAM_STEP):.2f}"] += 1
    per_bin = {}
    for preset_name in ("appendix-b", "table-4"):
        cfg = bin_preset(preset_name)
        counts = {label.value: 0 for label in cfg.labels()}
        counts[DifficultyLabel.UNBINNED.value] = 0
        for record in records:
            if record.pass_rate is None:
                continue
            counts[assign_bin(record.pass_rate, cfg).value] += 1
        per_bin[preset_name] = counts
    collisions = sum(count - 1 for count in digests.values() if count > 1)
    return {
        "total": len(records),
        "graded": graded,
        "per_env": per_env,
        "pass_rate_histogram": histogram,
        "per_bin": per_bin,
        "digest_collisions": collisions,
    }
