import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codeforge.model import (
    AttemptRecord,
    AttemptStatus,
    Chain,
    DifficultyLabel,
    EnvKind,
    InvariantError,
    PassRateSummary,
)
from codeforge.recordio import (
    SchemaError,
    SerializationError,
    build_manifest,
    canonical_digest,
    content_digest,
    decode_record,
    encode_record,
    normalize_code,
    normalize_message,
    read_records,
    write_manifest,
    write_records,
)

from fixtures import make_problem


def test_minimal_deduction_problem_roundtrip():
    problem = make_problem()
    line = encode_record(problem)
    assert "\n" not in line
    assert '"env":"deduction"' in line
    assert decode_record(line) == problem


def test_attempt_roundtrip():
    record = AttemptRecord("p-1", 3, "print(1)", 1, AttemptStatus.OK)
    assert decode_record(encode_record(record)) == record


def test_newline_heavy_code_stays_one_physical_line():
    problem = make_problem(code="def f(x):\n    # comment\n    return x\n\n")
    line = encode_record(problem)
    # byte-scan oracle: no raw newline or carriage return anywhere
    assert all(byte not in (0x0A, 0x0D) for byte in line.encode("utf-8"))
    assert decode_record(line) == problem


def test_reward_out_of_domain_is_invariant_error():
    line = json.dumps(
        {
            "problem_id": "p",
            "attempt_index": 0,
            "submission": "x",
            "reward": 2,
            "exec_status": "ok",
        }
    )
    with pytest.raises(InvariantError):
        decode_record(line)


def test_reward_one_with_timeout_is_invariant_error():
    line = json.dumps(
        {
            "problem_id": "p",
            "attempt_index": 0,
            "submission": "x",
            "reward": 1,
            "exec_status": "timeout",
        }
    )
    with pytest.raises(InvariantError):
        decode_record(line)


def test_missing_required_field_is_schema_error():
    obj = json.loads(encode_record(make_problem()))
    del obj["env"]
    with pytest.raises(SchemaError):
        decode_record(json.dumps(obj))


def test_unknown_field_is_schema_error():
    obj = json.loads(encode_record(make_problem()))
    obj["surprise"] = 1
    with pytest.raises(SchemaError):
        decode_record(json.dumps(obj))


def test_wrong_type_is_schema_error():
    obj = json.loads(encode_record(make_problem()))
    obj["turn_index"] = "first"
    with pytest.raises(SchemaError):
        decode_record(json.dumps(obj))


def test_unrepresentable_text_is_serialization_error():
    problem = make_problem(message="lone surrogate \ud800 here")
    with pytest.raises(SerializationError):
        encode_record(problem)


def test_chain_roundtrip():
    hard = make_problem(problem_id="h", pass_rate=Fraction(1, 10), bin_label=DifficultyLabel.HARD)
    medium = make_problem(
        problem_id="m", turn_index=2, parent_id="h", pass_rate=Fraction(1, 2),
        bin_label=DifficultyLabel.MEDIUM,
    )
    easy = make_problem(
        problem_id="e", turn_index=3, parent_id="m", pass_rate=Fraction(7, 8),
        bin_label=DifficultyLabel.EASY,
    )
    chain = Chain(chain_id="c-1", hard=hard, medium=medium, easy=easy)
    assert decode_record(encode_record(chain)) == chain


def test_pass_rate_roundtrips_exactly_for_awkward_denominators():
    summary = PassRateSummary("p", 3, Fraction(1, 3), ("s",), ("f",))
    decoded = decode_record(encode_record(summary))
    assert decoded.pass_rate == Fraction(1, 3)
    assert decoded == summary


# --- digest behavior ---------------------------------------------------------


def test_digest_ignores_comments_and_indentation():
    a = "def f(x):\n    return x + 1  # add one\n"
    b = "def f(x):\n        return x + 1\n\n\n"
    assert content_digest(a, "Add one.") == content_digest(b, "add  one.")


def test_digest_changes_with_message_or_code_token():
    code = "def f(x):\n    return x + 1\n"

    def independent_normalize(code_text, message_text):
        code_lines = []
        for line in code_text.splitlines():
            line = line.split("#")[0].rstrip()
            if line.strip():
                code_lines.append(" ".join(line.split()))
        return tuple(code_lines), " ".join(message_text.lower().split())

    assert independent_normalize(code, "Add one.") != independent_normalize(code, "Add two.")
    assert content_digest(code, "Add one.") != content_digest(code, "Add two.")
    assert content_digest(code, "Add one.") != content_digest(
        "def f(x):\n    return x + 2\n", "Add one."
    )


def test_digest_is_deterministic_and_fixed_width():
    problem = make_problem()
    assert canonical_digest(problem) == canonical_digest(problem)
    assert len(canonical_digest(problem)) == 64


def test_digest_requires_code_and_message():
    with pytest.raises(InvariantError):
        content_digest("", "message")


def test_comment_stripping_respects_string_literals():
    code = "def f(x):\n    return '#not a comment' + str(x)\n"
    assert "#not a comment" in normalize_code(code)
    assert normalize_message("  Mixed   CASE text ") == "mixed case text"


# --- files and manifests -----------------------------------------------------


def test_write_read_records_and_manifest(tmp_path):
    problems = [
        make_problem(problem_id=f"p-{i}", env=EnvKind.DEDUCTION, pass_rate=Fraction(i, 8),
                     bin_label=DifficultyLabel.MEDIUM if i == 4 else None)
        for i in range(1, 6)
    ]
    path = tmp_path / "data.jsonl"
    assert write_records(str(path), problems) == 5
    assert list(read_records(str(path))) == problems
    manifest = write_manifest(str(path), config_fingerprint="test")
    assert manifest.record_count == 5
    assert manifest.per_env == {"deduction": 5}
    assert manifest.per_bin == {"medium": 1}
    again = build_manifest(str(path), "test")
    assert again.record_count == manifest.record_count


# --- property: round trip over generated records ------------------------------

_env = st.sampled_from(list(EnvKind))
_text = st.text(min_size=1, max_size=40)


@st.composite
def problems(draw):
    env = draw(_env)
    if env is EnvKind.INDUCTION:
        k = draw(st.integers(min_value=2, max_value=6))
        visible_k = draw(st.integers(min_value=1, max_value=k - 1))
    else:
        k, visible_k = 1, None
    inputs = tuple(draw(_text) for _ in range(k))
    golds = tuple(draw(_text) for _ in range(k))
    turn = draw(st.integers(min_value=1, max_value=4))
    m = draw(st.integers(min_value=1, max_value=64))
    numerator = draw(st.integers(min_value=0, max_value=m))
    return make_problem(
        env,
        problem_id=draw(_text),
        code=draw(_text),
        message=draw(_text),
        inputs=inputs,
        gold_outputs=golds,
        visible_k=visible_k,
        turn_index=turn,
        parent_id=draw(_text) if turn > 1 else None,
        pass_rate=draw(st.one_of(st.none(), st.just(Fraction(numerator, m)))),
        bin_label=draw(st.one_of(st.none(), st.sampled_from(list(DifficultyLabel)))),
        dedup_digest=draw(_text),
    )


@settings(max_examples=200, deadline=None)
@given(problems())
def test_problem_roundtrip_property(problem):
    assert decode_record(encode_record(problem)) == problem


@st.composite
def summaries(draw):
    m = draw(st.integers(min_value=1, max_value=64))
    rewards = draw(st.integers(min_value=0, max_value=m))
    solved = tuple(draw(_text) for _ in range(draw(st.integers(1, 2)))) if rewards else ()
    failed = tuple(draw(_text) for _ in range(draw(st.integers(1, 2)))) if rewards < m else ()
    return PassRateSummary("p", m, Fraction(rewards, m), solved, failed)


@settings(max_examples=200, deadline=None)
@given(summaries())
def test_summary_roundtrip_property(summary):
    decoded = decode_record(encode_record(summary))
    assert decoded == summary
    assert decoded.pass_rate * decoded.attempts_m == decoded.reward_sum


@settings(max_examples=100, deadline=None)
@given(
    st.integers(min_value=0, max_value=63),
    st.text(max_size=30),
    st.sampled_from(list(AttemptStatus)),
)
def test_attempt_roundtrip_property(index, submission, status):
    reward = 1 if status is AttemptStatus.OK and index % 2 else 0
    record = AttemptRecord("p", index, submission, reward, status)
    assert decode_record(encode_record(record)) == record
