"""Single operator entry point.

Subcommands: gen, chains, curate (bin/dedup/match), schedule, exec, stats,
passk. Exit codes: 0 success, 1 domain error, 2 usage error. Scripted
backends are addressable straight from the command line
(``--backend scripted:FILE``), so CI runs need neither network nor model
keys; fixture files may also carry executor table entries, which makes a
scripted run fully offline.

Fixture file format, one JSON object per line:

    {"role": "teacher"|"student", "response": "...", "match"?: ..., "times"?: n}
    {"role": "exec", "code": "...", "entry": "f", "args": "...",
     "status": "ok", "output": "..."}        # or "error": "..."
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from typing import Optional, Sequence

from . import curation, curriculum, pipeline, recordio, rlmath
from .environments import env_kind, grade_submission
from .model import InvariantError, ProblemSpec, as_pass_rate
from .modelclient import (
    BackendUnavailable,
    CompletionBackend,
    RemoteBackend,
    ScriptedBackend,
    ScriptedFixture,
)
from .sandbox import ExecStatus, Executor, ExecutionResult, FakeExecutor, WorkerPool

log = logging.getLogger(__name__)

DOMAIN_ERRORS = (
    InvariantError,
    recordio.SchemaError,
    recordio.SerializationError,
    curation.ChainFailed,
    curriculum.StepOutOfRange,
    rlmath.DomainError,
    pipeline.CorpusTooSmall,
    pipeline.SeedAborted,
    BackendUnavailable,
    FileNotFoundError,
)


def _load_fixture_file(path: str) -> tuple[ScriptedFixture, ScriptedFixture, FakeExecutor]:
    teacher = ScriptedFixture()
    student = ScriptedFixture()
    fake = FakeExecutor()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
                role = entry["role"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise InvariantError(f"{path}:{lineno}: bad fixture entry: {exc}") from None
            if role in ("teacher", "student"):
                fixture = teacher if role == "teacher" else student
                fixture.add(
                    response=entry["response"],
                    match=entry.get("match"),
                    times=entry.get("times", 1),
                )
            elif role == "exec":
                status = ExecStatus(entry.get("status", "ok"))
                result = ExecutionResult(
                    status=status,
                    output_canonical=entry.get("output") if status is ExecStatus.OK else None,
                    error_text=entry.get("error"),
                    wall_ms=int(entry.get("wall_ms", 0)),
                )
                fake.register(entry["code"], entry["entry"], entry.get("args", ""), result)
            else:
                raise InvariantError(f"{path}:{lineno}: unknown fixture role {role!r}")
    return teacher, student, fake


def _make_backends(
    backend_spec: str,
) -> tuple[CompletionBackend, CompletionBackend, Optional[FakeExecutor]]:
    if backend_spec.startswith("scripted:"):
        teacher_fx, student_fx, fake = _load_fixture_file(backend_spec[len("scripted:"):])
        return ScriptedBackend(teacher_fx), ScriptedBackend(student_fx), fake
    if backend_spec == "remote":
        remote = RemoteBackend()
        return remote, remote, None
    raise InvariantError(f"unknown backend: {backend_spec!r} (want scripted:FILE or remote)")


def _make_executor(kind: Optional[str], fake: Optional[FakeExecutor]) -> Executor:
    if kind == "fake" or (kind is None and fake is not None):
        if fake is None:
            raise InvariantError("fake executor requested but fixture has no exec entries")
        return fake
    return WorkerPool()


def _read_problems(path: str) -> list[ProblemSpec]:
    import os

    if os.path.isdir(path):  # gen output directory
        path = os.path.join(path, "problems.jsonl")
    problems = []
    for record in recordio.read_records(path):
        if isinstance(record, ProblemSpec):
            problems.append(record)
    return problems


# --- subcommand bodies ------------------------------------------------------


def _merged_gen_settings(args: argparse.Namespace) -> dict:
    """Config-file values overridden by explicitly passed flags."""
    settings = {
        "env": "induction",
        "turns": 6,
        "attempts": 32,
        "seed_count": 1,
        "band_low": "0.01",
        "band_high": "0.97",
        "concurrency": 1,
        "rng_seed": 0,
    }
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise InvariantError(f"{args.config}: config must hold an object")
        unknown = set(loaded) - set(settings)
        if unknown:
            raise InvariantError(f"{args.config}: unknown config keys {sorted(unknown)}")
        settings.update(loaded)
    for key in settings:
        flag_value = getattr(args, key)
        if flag_value is not None:
            settings[key] = flag_value
    return settings


def _cmd_gen(args: argparse.Namespace) -> int:
    import os

    teacher, student, fake = _make_backends(args.backend)
    executor = _make_executor(args.executor, fake)
    settings = _merged_gen_settings(args)
    cfg = pipeline.PipelineConfig(
        env=env_kind(settings["env"]),
        turns_per_seed=int(settings["turns"]),
        attempts_m=int(settings["attempts"]),
        filter_band=(as_pass_rate(str(settings["band_low"])), as_pass_rate(str(settings["band_high"]))),
        concurrency=int(settings["concurrency"]),
        rng_seed=int(settings["rng_seed"]),
    )
    with open(args.seeds, "r", encoding="utf-8") as fh:
        corpus = fh.read()
    os.makedirs(args.out, exist_ok=True)
    session_log = os.path.join(args.out, "session.jsonl")
    report = pipeline.run_generation(
        corpus, teacher, student, executor, cfg,
        n_seeds=int(settings["seed_count"]), session_log=session_log,
    )
    dataset_path = os.path.join(args.out, "problems.jsonl")
    recordio.write_records(dataset_path, report.kept)
    recordio.write_manifest(dataset_path, config_fingerprint=f"rng_seed={cfg.rng_seed}")
    print(
        f"kept {len(report.kept)} of {len(report.outcomes)} problems "
        f"({report.aborted_seeds} seeds aborted) -> {dataset_path}"
    )
    for reason, count in sorted(report.drop_counts.items()):
        print(f"  dropped {count} ({reason})")
    if isinstance(executor, WorkerPool):
        executor.close()
    return 0


def _cmd_chains(args: argparse.Namespace) -> int:
    import os

    teacher, student, fake = _make_backends(args.backend)
    executor = _make_executor(args.executor, fake)
    cfg = curation.ChainBuildConfig(
        attempts_m=args.attempts,
        max_regeneration_tries=args.retries,
        pipeline=pipeline.PipelineConfig(
            env=env_kind(args.env), attempts_m=args.attempts, rng_seed=args.rng_seed
        ),
    )
    rng = random.Random(args.rng_seed)
    os.makedirs(args.out, exist_ok=True)
    session_log = os.path.join(args.out, "session.jsonl")
    chains = []
    failures = 0
    for hard in _read_problems(args.hard_set):
        try:
            chains.append(
                curation.build_chain(hard, teacher, student, executor, cfg, rng, session_log)
            )
        except curation.ChainFailed as exc:
            failures += 1
            log.warning("chain failed for %s: %s", hard.problem_id, exc)
    out_path = os.path.join(args.out, "chains.jsonl")
    recordio.write_records(out_path, chains)
    recordio.write_manifest(out_path, config_fingerprint=f"rng_seed={args.rng_seed}")
    print(f"built {len(chains)} chains ({failures} failed) -> {out_path}")
    if isinstance(executor, WorkerPool):
        executor.close()
    return 0


def _cmd_curate(args: argparse.Namespace) -> int:
    if args.curate_cmd == "bin":
        cfg = curation.bin_preset(args.bins)
        labeled = curation.label_dataset(_read_problems(args.dataset), cfg)
        recordio.write_records(args.out, labeled)
        recordio.write_manifest(args.out, config_fingerprint=f"bins={args.bins}")
        print(f"labeled {len(labeled)} problems with {args.bins} bins -> {args.out}")
        return 0
    if args.curate_cmd == "dedup":
        kept, dropped = curation.dedup_dataset(
            _read_problems(args.dataset), jaccard_threshold=args.threshold
        )
        recordio.write_records(args.out, kept)
        recordio.write_manifest(args.out)
        print(f"kept {len(kept)}, dropped {len(dropped)} -> {args.out}")
        return 0
    if args.curate_cmd == "match":
        cfg = curation.bin_preset(args.bins)
        rng = random.Random(args.rng_seed)
        matched_a, matched_b = curation.match_histograms(
            _read_problems(args.a), _read_problems(args.b), cfg, rng
        )
        recordio.write_records(args.out_a, matched_a)
        recordio.write_records(args.out_b, matched_b)
        print(f"matched histograms: {len(matched_a)} + {len(matched_b)} records")
        return 0
    raise InvariantError(f"unknown curate subcommand: {args.curate_cmd!r}")


def _cmd_schedule(args: argparse.Namespace) -> int:
    schedule = curriculum.schedule_preset(args.name)
    weights = curriculum.stage_weights(schedule, args.step)
    print(" ".join(f"{label}={weights[label]:.2f}" for label in schedule.splits))
    return 0


def _cmd_exec(args: argparse.Namespace) -> int:
    problems = _read_problems(args.problem)
    if len(problems) != 1:
        raise InvariantError(f"{args.problem}: expected exactly one problem record")
    with open(args.submission, "r", encoding="utf-8") as fh:
        submission = fh.read().strip()
    executor: Executor
    if args.backend and args.backend.startswith("scripted:"):
        _, _, fake = _make_backends(args.backend)
        executor = _make_executor("fake", fake)
    else:
        executor = WorkerPool()
    try:
        grade = grade_submission(submission, problems[0], executor)
    finally:
        if isinstance(executor, WorkerPool):
            executor.close()
    print(f"reward={grade.reward} exec_status={grade.exec_status.value}")
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    report = curation.dataset_stats(_read_problems(args.dataset))
    print(json.dumps(report, indent=2))
    return 0


def _cmd_passk(args: argparse.Namespace) -> int:
    value = rlmath.pass_at_k(args.n, args.c, args.k)
    print(f"{float(value):.6g}")
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codeforge",
        description="Generate, grade, curate, and schedule verifiable coding problems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="run the multi-turn generation pipeline")
    gen.add_argument("--env", required=True, help="induction|abduction|deduction|fuzzing")
    gen.add_argument("--seeds", required=True, help="seed corpus text file")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--backend", required=True, help="scripted:FIXTURE or remote")
    gen.add_argument("--config", default=None, help="JSON config file; flags win over it")
    gen.add_argument("--turns", type=int, default=None)
    gen.add_argument("--attempts", type=int, default=None)
    gen.add_argument("--seed-count", type=int, default=None, help="number of seeds to run")
    gen.add_argument("--executor", choices=("fake", "pool"), default=None)
    gen.add_argument("--band-low", default=None)
    gen.add_argument("--band-high", default=None)
    gen.add_argument("--concurrency", type=int, default=None)
    gen.add_argument("--rng-seed", type=int, default=None)
    gen.set_defaults(func=_cmd_gen)

    chains = sub.add_parser("chains", help="build easy-medium-hard chains from hard problems")
    chains.add_argument("--hard-set", required=True, help="dataset of hard problems")
    chains.add_argument("--out", required=True)
    chains.add_argument("--env", default="induction")
    chains.add_argument("--attempts", type=int, default=32)
    chains.add_argument("--retries", type=int, default=4)
    chains.add_argument("--backend", required=True)
    chains.add_argument("--executor", choices=("fake", "pool"), default=None)
    chains.add_argument("--rng-seed", type=int, default=0)
    chains.set_defaults(func=_cmd_chains)

    curate = sub.add_parser("curate", help="bin, dedup, or histogram-match datasets")
    curate_sub = curate.add_subparsers(dest="curate_cmd", required=True)
    cbin = curate_sub.add_parser("bin")
    cbin.add_argument("--dataset", required=True)
    cbin.add_argument("--bins", default="appendix-b")
    cbin.add_argument("--out", required=True)
    cdedup = curate_sub.add_parser("dedup")
    cdedup.add_argument("--dataset", required=True)
    cdedup.add_argument("--out", required=True)
    cdedup.add_argument("--threshold", type=float, default=0.9)
    cmatch = curate_sub.add_parser("match")
    cmatch.add_argument("--a", required=True)
    cmatch.add_argument("--b", required=True)
    cmatch.add_argument("--bins", default="appendix-b")
    cmatch.add_argument("--rng-seed", type=int, default=0)
    cmatch.add_argument("--out-a", required=True)
    cmatch.add_argument("--out-b", required=True)
    curate.set_defaults(func=_cmd_curate)

    schedule = sub.add_parser("schedule", help="inspect curriculum schedules")
    schedule_sub = schedule.add_subparsers(dest="schedule_cmd", required=True)
    preview = schedule_sub.add_parser("preview")
    preview.add_argument("--name", required=True)
    preview.add_argument("--step", type=int, required=True)
    schedule.set_defaults(func=_cmd_schedule)

    execp = sub.add_parser("exec", help="grade one submission against one problem")
    execp.add_argument("--problem", required=True, help="file holding one problem record")
    execp.add_argument("--submission", required=True, help="file holding the submission text")
    execp.add_argument("--backend", default=None, help="scripted:FIXTURE for offline grading")
    execp.set_defaults(func=_cmd_exec)

    stats = sub.add_parser("stats", help="summarize a dataset")
    stats.add_argument("--dataset", required=True)
    stats.set_defaults(func=_cmd_stats)

    passk = sub.add_parser("passk", help="unbiased pass@k from n samples with c correct")
    passk.add_argument("--n", type=int, required=True)
    passk.add_argument("--c", type=int, required=True)
    passk.add_argument("--k", type=int, required=True)
    passk.set_defaults(func=_cmd_passk)

    return parser


def dispatch(argv: Sequence[str]) -> int:
    """Route argv to a subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
