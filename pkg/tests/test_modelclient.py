import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from codeforge.model import InvariantError
from codeforge.modelclient import (
    BackendUnavailable,
    CompletionParams,
    ContextTooLong,
    LogCorrupt,
    ReasoningEffort,
    RemoteBackend,
    STUDENT_DEFAULTS,
    ScriptedBackend,
    ScriptedFixture,
    TEACHER_DEFAULTS,
    log_completion,
    prompt_digest,
    record_replay,
)

PARAMS = CompletionParams()


def test_params_validation_and_role_defaults():
    assert TEACHER_DEFAULTS.reasoning_effort is ReasoningEffort.HIGH
    assert STUDENT_DEFAULTS.reasoning_effort is ReasoningEffort.LOW
    assert TEACHER_DEFAULTS.temperature == 1.0 == STUDENT_DEFAULTS.temperature
    with pytest.raises(InvariantError):
        CompletionParams(temperature=-0.1)
    with pytest.raises(InvariantError):
        CompletionParams(max_tokens=0)


def test_scripted_playback_any_match():
    fixture = ScriptedFixture()
    fixture.add("hello", match="any")
    backend = ScriptedBackend(fixture)
    assert backend.complete("whatever", PARAMS) == "hello"


def test_scripted_exhaustion_raises():
    fixture = ScriptedFixture()
    fixture.add("only once", times=1)
    backend = ScriptedBackend(fixture)
    assert backend.complete("p", PARAMS) == "only once"
    with pytest.raises(BackendUnavailable):
        backend.complete("p", PARAMS)


def test_scripted_matching_modes():
    fixture = ScriptedFixture()
    fixture.add("by digest", match=f"digest:{prompt_digest('exact prompt')}")
    fixture.add("by substring", match="contains:needle", times=2)
    fixture.add("fallback", match=None, times=None)
    backend = ScriptedBackend(fixture)
    assert backend.complete("exact prompt", PARAMS) == "by digest"
    assert backend.complete("hay needle stack", PARAMS) == "by substring"
    assert backend.complete("no match here", PARAMS) == "fallback"
    assert backend.complete("needle again", PARAMS) == "by substring"
    assert backend.complete("anything", PARAMS) == "fallback"  # unbounded entry


def test_record_replay_round_trip(tmp_path):
    log_path = tmp_path / "session.jsonl"
    log_completion(str(log_path), "teacher", "prompt one", "response one")
    fixture = record_replay(str(log_path))
    assert len(fixture) == 1
    backend = ScriptedBackend(fixture)
    assert backend.complete("prompt one", PARAMS) == "response one"
    with pytest.raises(BackendUnavailable):
        backend.complete("different prompt", PARAMS)


def test_record_replay_filters_roles(tmp_path):
    log_path = tmp_path / "session.jsonl"
    log_completion(str(log_path), "teacher", "tp", "tr")
    log_completion(str(log_path), "student", "sp", "sr")
    assert len(record_replay(str(log_path), role="teacher")) == 1
    assert len(record_replay(str(log_path))) == 2


def test_record_replay_empty_log_yields_unusable_backend():
    fixture = record_replay([])
    assert len(fixture) == 0
    with pytest.raises(BackendUnavailable):
        ScriptedBackend(fixture).complete("anything", PARAMS)


def test_record_replay_corrupt_log():
    with pytest.raises(LogCorrupt):
        record_replay(["{not json"])
    with pytest.raises(LogCorrupt):
        record_replay([json.dumps({"event": "completion", "role": "teacher"})])


# --- remote backend against a counting stub server ----------------------------


class _StubHandler(BaseHTTPRequestHandler):
    script: list[int] = []
    requests_seen: list[dict] = []
    context_error = False

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).requests_seen.append(body)
        status = self.script.pop(0) if self.script else 200
        if status == 200:
            payload = {"choices": [{"message": {"content": "stub says hi"}}]}
            data = json.dumps(payload).encode()
        elif type(self).context_error and status == 400:
            data = json.dumps({"error": "maximum context length exceeded"}).encode()
        else:
            data = b'{"error": "nope"}'
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture()
def stub_server():
    try:
        server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    except OSError:
        pytest.skip("loopback sockets unavailable in this sandbox")
    _StubHandler.script = []
    _StubHandler.requests_seen = []
    _StubHandler.context_error = False
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


def test_remote_retries_transient_statuses(stub_server):
    _StubHandler.script = [429, 429, 200]
    sleeps: list[float] = []
    backend = RemoteBackend(api_base=stub_server, api_key="k", sleep_fn=sleeps.append)
    text = backend.complete("hello", PARAMS)
    assert text == "stub says hi"
    assert len(_StubHandler.requests_seen) == 3  # stub counted two retries
    assert len(sleeps) == 2
    assert all(0 < s <= 48 for s in sleeps)


def test_remote_gives_up_after_retry_limit(stub_server):
    _StubHandler.script = [500] * 10
    backend = RemoteBackend(api_base=stub_server, sleep_fn=lambda _s: None)
    with pytest.raises(BackendUnavailable):
        backend.complete("hello", PARAMS)
    assert len(_StubHandler.requests_seen) == 6  # initial try + 5 retries


def test_remote_does_not_retry_plain_4xx(stub_server):
    _StubHandler.script = [403]
    backend = RemoteBackend(api_base=stub_server, sleep_fn=lambda _s: None)
    with pytest.raises(BackendUnavailable):
        backend.complete("hello", PARAMS)
    assert len(_StubHandler.requests_seen) == 1


def test_remote_surfaces_context_overflow_distinctly(stub_server):
    _StubHandler.script = [400]
    _StubHandler.context_error = True
    backend = RemoteBackend(api_base=stub_server, sleep_fn=lambda _s: None)
    with pytest.raises(ContextTooLong):
        backend.complete("hello", PARAMS)


def test_remote_body_follows_template(stub_server):
    _StubHandler.script = [200]
    backend = RemoteBackend(api_base=stub_server)
    backend.complete("the prompt", CompletionParams(temperature=0.5, max_tokens=64))
    body = _StubHandler.requests_seen[-1]
    assert body["messages"] == [{"role": "user", "content": "the prompt"}]
    assert body["temperature"] == 0.5
    assert body["max_tokens"] == 64
    assert body["reasoning_effort"] == "low"


def test_remote_requires_api_base(monkeypatch):
    monkeypatch.delenv("MODEL_API_BASE", raising=False)
    with pytest.raises(BackendUnavailable):
        RemoteBackend()
