"""Line-delimited record persistence and content digests.

Datasets are streamed and appended during generation, so the format is one
JSON object per line, UTF-8, LF endings, with a fixed field order per
record type. A manifest sidecar (``<file>.manifest.json``) summarizes
counts. Pass rates are stored as exact ``"num/den"`` strings; the 6-digit
decimal form is for display only, since decimals cannot represent rates
like 1/3 and exactness at bin edges matters downstream.

Record types are told apart by their field sets (problem records carry
``env``, attempts carry ``attempt_index``, ...), so lines stay free of
bookkeeping fields.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
import re
from fractions import Fraction
from typing import Iterable, Iterator, Optional

from .model import (
    AttemptRecord,
    AttemptStatus,
    Chain,
    DatasetManifest,
    DifficultyLabel,
    EnvKind,
    InvariantError,
    PassRateSummary,
    ProblemSpec,
    Record,
)


class SerializationError(ValueError):
    """A record field cannot be represented in the on-disk encoding."""


class SchemaError(ValueError):
    """A line does not match any record schema."""


_PROBLEM_FIELDS = (
    "problem_id",
    "env",
    "code",
    "message",
    "inputs",
    "gold_outputs",
    "visible_k",
    "seed_id",
    "turn_index",
    "parent_id",
    "pass_rate",
    "bin_label",
    "dedup_digest",
)
_ATTEMPT_FIELDS = ("problem_id", "attempt_index", "submission", "reward", "exec_status")
_SUMMARY_FIELDS = ("problem_id", "attempts_m", "pass_rate", "solved_examples", "failed_examples")
_CHAIN_FIELDS = ("chain_id", "hard", "medium", "easy")


def _fraction_str(p: Optional[Fraction]) -> Optional[str]:
    if p is None:
        return None
    return f"{p.numerator}/{p.denominator}"


def _problem_obj(p: ProblemSpec) -> dict:
    return {
        "problem_id": p.problem_id,
        "env": p.env.value,
        "code": p.code,
        "message": p.message,
        "inputs": list(p.inputs),
        "gold_outputs": list(p.gold_outputs),
        "visible_k": p.visible_k,
        "seed_id": p.seed_id,
        "turn_index": p.turn_index,
        "parent_id": p.parent_id,
        "pass_rate": _fraction_str(p.pass_rate),
        "bin_label": p.bin_label.value if p.bin_label else None,
        "dedup_digest": p.dedup_digest,
    }


def _to_obj(record: Record) -> dict:
    if isinstance(record, ProblemSpec):
        return _problem_obj(record)
    if isinstance(record, AttemptRecord):
        return {
            "problem_id": record.problem_id,
            "attempt_index": record.attempt_index,
            "submission": record.submission,
            "reward": record.reward,
            "exec_status": record.exec_status.value,
        }
    if isinstance(record, PassRateSummary):
        return {
            "problem_id": record.problem_id,
            "attempts_m": record.attempts_m,
            "pass_rate": _fraction_str(record.pass_rate),
            "solved_examples": list(record.solved_examples),
            "failed_examples": list(record.failed_examples),
        }
    if isinstance(record, Chain):
        return {
            "chain_id": record.chain_id,
            "hard": _problem_obj(record.hard),
            "medium": _problem_obj(record.medium),
            "easy": _problem_obj(record.easy),
        }
    raise SerializationError(f"not a record type: {type(record).__name__}")


def encode_record(record: Record) -> str:
    """Encode one record as a single physical line (no trailing newline)."""
    line = json.dumps(_to_obj(record), ensure_ascii=False, separators=(",", ":"))
    try:
        line.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise SerializationError(f"unrepresentable text in record: {exc}") from None
    if "\n" in line or "\r" in line:
        raise SerializationError("encoded record spans multiple lines")
    return line


def _expect(obj: dict, fields: tuple[str, ...], kind: str) -> None:
    missing = [f for f in fields if f not in obj]
    unknown = [f for f in obj if f not in fields]
    if missing:
        raise SchemaError(f"{kind} record missing field(s): {', '.join(missing)}")
    if unknown:
        raise SchemaError(f"{kind} record has unknown field(s): {', '.join(unknown)}")


def _typed(obj: dict, key: str, types, kind: str, optional: bool = False):
    value = obj[key]
    if value is None and optional:
        return None
    wrong_type = not isinstance(value, types)
    bool_as_number = isinstance(value, bool) and bool not in _as_tuple(types)
    if wrong_type or bool_as_number:
        raise SchemaError(f"{kind}.{key} has wrong type: {type(value).__name__}")
    return value


def _as_tuple(types) -> tuple:
    return types if isinstance(types, tuple) else (types,)


def _str_list(obj: dict, key: str, kind: str) -> list[str]:
    value = obj[key]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise SchemaError(f"{kind}.{key} must be a list of strings")
    return value


def _parse_fraction(text: Optional[str], kind: str) -> Optional[Fraction]:
    if text is None:
        return None
    if not isinstance(text, str) or not re.fullmatch(r"-?\d+/\d+", text):
        raise SchemaError(f"{kind}.pass_rate must be a num/den string, got {text!r}")
    return Fraction(text)


def _decode_problem(obj: dict) -> ProblemSpec:
    _expect(obj, _PROBLEM_FIELDS, "problem")
    env_text = _typed(obj, "env", str, "problem")
    try:
        env = EnvKind(env_text)
    except ValueError:
        raise SchemaError(f"unknown env: {env_text!r}") from None
    bin_text = _typed(obj, "bin_label", str, "problem", optional=True)
    try:
        bin_label = DifficultyLabel(bin_text) if bin_text is not None else None
    except ValueError:
        raise SchemaError(f"unknown bin label: {bin_text!r}") from None
    return ProblemSpec(
        problem_id=_typed(obj, "problem_id", str, "problem"),
        env=env,
        code=_typed(obj, "code", str, "problem"),
        message=_typed(obj, "message", str, "problem"),
        inputs=tuple(_str_list(obj, "inputs", "problem")),
        gold_outputs=tuple(_str_list(obj, "gold_outputs", "problem")),
        visible_k=_typed(obj, "visible_k", int, "problem", optional=True),
        seed_id=_typed(obj, "seed_id", str, "problem"),
        turn_index=_typed(obj, "turn_index", int, "problem"),
        parent_id=_typed(obj, "parent_id", str, "problem", optional=True),
        pass_rate=_parse_fraction(obj["pass_rate"], "problem"),
        bin_label=bin_label,
        dedup_digest=_typed(obj, "dedup_digest", str, "problem"),
    )


def _decode_attempt(obj: dict) -> AttemptRecord:
    _expect(obj, _ATTEMPT_FIELDS, "attempt")
    status_text = _typed(obj, "exec_status", str, "attempt")
    try:
        status = AttemptStatus(status_text)
    except ValueError:
        raise SchemaError(f"unknown exec_status: {status_text!r}") from None
    return AttemptRecord(
        problem_id=_typed(obj, "problem_id", str, "attempt"),
        attempt_index=_typed(obj, "attempt_index", int, "attempt"),
        submission=_typed(obj, "submission", str, "attempt"),
        reward=_typed(obj, "reward", int, "attempt"),
        exec_status=status,
    )


def _decode_summary(obj: dict) -> PassRateSummary:
    _expect(obj, _SUMMARY_FIELDS, "summary")
    pass_rate = _parse_fraction(obj["pass_rate"], "summary")
    if pass_rate is None:
        raise SchemaError("summary.pass_rate is required")
    return PassRateSummary(
        problem_id=_typed(obj, "problem_id", str, "summary"),
        attempts_m=_typed(obj, "attempts_m", int, "summary"),
        pass_rate=pass_rate,
        solved_examples=tuple(_str_list(obj, "solved_examples", "summary")),
        failed_examples=tuple(_str_list(obj, "failed_examples", "summary")),
    )


def _decode_chain(obj: dict) -> Chain:
    _expect(obj, _CHAIN_FIELDS, "chain")
    members = {}
    for level in ("hard", "medium", "easy"):
        if not isinstance(obj[level], dict):
            raise SchemaError(f"chain.{level} must be a problem object")
        members[level] = _decode_problem(obj[level])
    return Chain(chain_id=_typed(obj, "chain_id", str, "chain"), **members)


def decode_record(line: str) -> Record:
    """Decode one line back into a typed record.

    Raises SchemaError for structural problems (missing/unknown/mistyped
    fields) and InvariantError when a structurally valid record violates
    its type invariants (e.g. reward 1 with a timeout status).
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not a record line: {exc}") from None
    if not isinstance(obj, dict):
        raise SchemaError("record line must hold a JSON object")
    if "env" in obj:
        return _decode_problem(obj)
    if "attempt_index" in obj:
        return _decode_attempt(obj)
    if "attempts_m" in obj:
        return _decode_summary(obj)
    if "chain_id" in obj:
        return _decode_chain(obj)
    raise SchemaError("line matches no known record type")


# --- content digest -------------------------------------------------------

_WS_RUN = re.compile(r"[ \t]+")


def _strip_line_comment(line: str) -> str:
    """Drop a trailing #-comment, respecting simple quoted strings."""
    quote = ""
    for i, ch in enumerate(line):
        if quote:
            if ch == quote and line[i - 1] != "\\":
                quote = ""
        elif ch in ("'", '"'):
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


def normalize_code(code: str) -> str:
    """Comment-stripped, whitespace-collapsed code text.

    Deliberately not an AST pass: it only has to be cheap, deterministic,
    and agnostic to which guest language the code is written in.
    """
    lines = []
    for raw in code.splitlines():
        line = _WS_RUN.sub(" ", _strip_line_comment(raw)).rstrip()
        if line:
            lines.append(line)
    return "\n".join(lines)


def normalize_message(message: str) -> str:
    return " ".join(message.lower().split())


def content_digest(code: str, message: str) -> str:
    """Stable dedup key over normalized (code, message) content."""
    if not code or not message:
        raise InvariantError("digest requires both code and message")
    payload = normalize_code(code) + "\x1e" + normalize_message(message)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def canonical_digest(problem: ProblemSpec) -> str:
    return content_digest(problem.code, problem.message)


# --- dataset files --------------------------------------------------------


def write_records(path: str, records: Iterable[Record]) -> int:
    """Write records one per line; returns the record count."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(encode_record(record) + "\n")
            count += 1
    return count


def read_records(path: str) -> Iterator[Record]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield decode_record(line)


def manifest_path(dataset_path: str) -> str:
    return dataset_path + ".manifest.json"


def build_manifest(dataset_path: str, config_fingerprint: str = "") -> DatasetManifest:
    """Scan a dataset file and summarize it."""
    per_env: dict[str, int] = {}
    per_bin: dict[str, int] = {}
    count = 0
    for record in read_records(dataset_path):
        count += 1
        if isinstance(record, ProblemSpec):
            per_env[record.env.value] = per_env.get(record.env.value, 0) + 1
            if record.bin_label is not None:
                per_bin[record.bin_label.value] = per_bin.get(record.bin_label.value, 0) + 1
    return DatasetManifest(
        path=os.path.basename(dataset_path),
        record_count=count,
        per_env=dict(sorted(per_env.items())),
        per_bin=dict(sorted(per_bin.items())),
        created_at=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        config_fingerprint=config_fingerprint,
    )


def write_manifest(dataset_path: str, config_fingerprint: str = "") -> DatasetManifest:
    manifest = build_manifest(dataset_path, config_fingerprint)
    obj = {
        "path": manifest.path,
        "record_count": manifest.record_count,
        "per_env": dict(manifest.per_env),
        "per_bin": dict(manifest.per_bin),
        "created_at": manifest.created_at,
        "config_fingerprint": manifest.config_fingerprint,
    }
    with open(manifest_path(dataset_path), "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")
    return manifest
