"""Host-side code execution: worker pool, wire protocol, and a test fake.

Two Executor implementations share one contract:

* ``WorkerPool`` launches guest-worker subprocesses and speaks a JSON-lines
  protocol over their stdin/stdout. Isolation is OS-process level (rlimits,
  stream redirection, scratch dir) — no container or VM.
* ``FakeExecutor`` is a table from (code digest, entry, args) to results.
  Everything above this module is pure logic over the interface, so the
  whole generation pipeline tests offline against the fake; only
  integration suites need a real worker.

Wire protocol, one JSON object per line:

    request:  {request_id, mode, code, entry, args_literal,
               limits: {wall_ms, cpu_ms, memory_mb, max_output_bytes}}
    response: {request_id, status, output_canonical?, error_text?, wall_ms}

Workers print nothing else to stdout; stderr is captured for diagnostics.
``SANDBOX_WORKERS`` overrides the pool size.
"""

from __future__ import annotations

import hashlib
import json
import os
import queue
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from . import canonical as canon
from .model import ExecStatus, ExecutionResult, InvariantError


# run_function never blocks past wall_ms + this grace; the host stops
# waiting earlier so that killing and replacing the worker also fits.
SUPERVISOR_GRACE_MS = 2000
_RECV_GRACE_MS = 1500

# Workers are replaced after this many requests; generated code may leave
# droppings in guest global state.
REQUESTS_PER_WORKER = 100

DEFAULT_WORKER_CMD = (sys.executable, "-m", "codeforge_harness")


@dataclass(frozen=True)
class ExecLimits:
    wall_ms: int = 5000
    cpu_ms: int = 4000
    memory_mb: int = 512
    max_output_bytes: int = 65536

    def __post_init__(self) -> None:
        for name in ("wall_ms", "cpu_ms", "memory_mb", "max_output_bytes"):
            if getattr(self, name) <= 0:
                raise InvariantError(f"{name} must be positive")
        if self.cpu_ms > self.wall_ms:
            raise InvariantError("cpu_ms must not exceed wall_ms")

    def as_wire(self) -> dict:
        return {
            "wall_ms": self.wall_ms,
            "cpu_ms": self.cpu_ms,
            "memory_mb": self.memory_mb,
            "max_output_bytes": self.max_output_bytes,
        }


@dataclass(frozen=True)
class ExecRequest:
    request_id: str
    code: str
    entry: str
    args_literal: str
    limits: ExecLimits = field(default_factory=ExecLimits)
    mode: str = "call"  # "call" | "eval_literal"

    def __post_init__(self) -> None:
        if self.mode not in ("call", "eval_literal"):
            raise InvariantError(f"unknown mode: {self.mode}")
        if self.mode == "call" and not self.entry:
            raise InvariantError("call mode requires an entry name")
        if self.mode == "eval_literal" and not self.args_literal.strip():
            raise InvariantError("eval_literal mode requires literal text")


class DeterminismCheck:
    """Result of running a call twice in fresh workers."""

    def __init__(self, ok: bool, first: ExecutionResult, second: Optional[ExecutionResult]):
        self.ok = ok
        self.first = first
        self.second = second

    def __bool__(self) -> bool:
        return self.ok

    def __repr__(self) -> str:
        return f"DeterminismCheck(ok={self.ok}, first={self.first}, second={self.second})"


class Executor:
    """Interface every grader and pipeline stage codes against."""

    def run_function(
        self, code: str, entry: str, args_literal: str, limits: Optional[ExecLimits] = None
    ) -> ExecutionResult:
        raise NotImplementedError

    def eval_literal(self, text: str, limits: Optional[ExecLimits] = None) -> ExecutionResult:
        raise NotImplementedError

    def determinism_check(
        self, code: str, entry: str, args_literal: str, limits: Optional[ExecLimits] = None
    ) -> DeterminismCheck:
        """True iff two runs in fresh workers both succeed identically."""
        first = self._fresh_run(code, entry, args_literal, limits)
        if not first.ok:
            return DeterminismCheck(False, first, None)
        second = self._fresh_run(code, entry, args_literal, limits)
        ok = second.ok and first.output_canonical == second.output_canonical
        return DeterminismCheck(ok, first, second)

    def _fresh_run(
        self, code: str, entry: str, args_literal: str, limits: Optional[ExecLimits]
    ) -> ExecutionResult:
        return self.run_function(code, entry, args_literal, limits)

    def close(self) -> None:
        pass

    def __enter__(self) -> "Executor":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def code_digest(code: str) -> str:
    return hashlib.sha256(code.encode("utf-8")).hexdigest()


class FakeMissError(LookupError):
    """The fake has no scripted outcome for the requested (code, entry, args)."""


class FakeExecutor(Executor):
    """Table-driven executor for offline tests.

    Call-mode outcomes are looked up by (code digest, entry, args); the
    value may be a single result or a sequence consumed one per call
    (sticking on the last), which is how tests script nondeterministic or
    flaky guest code. Literal evaluation is computed for real — it is pure
    and needs no sandbox.

    A registered code whose requested entry was never registered answers
    with the worker's "entry not found" exception shape; a completely
    unknown code digest raises FakeMissError, which almost always means a
    test fixture forgot to script something.
    """

    def __init__(self) -> None:
        self._table: dict[tuple[str, str, str], list[ExecutionResult]] = {}
        self._known_codes: set[str] = set()
        self._lock = threading.Lock()
        self.call_count = 0

    @staticmethod
    def _key(code: str, entry: str, args_literal: str) -> tuple[str, str, str]:
        # Leading/trailing whitespace never changes guest behavior, so the
        # table ignores it; fixtures and parsed drafts then always agree.
        return (code_digest(code.strip()), entry, args_literal.strip())

    def register(
        self,
        code: str,
        entry: str,
        args_literal: str,
        result: ExecutionResult | Sequence[ExecutionResult],
    ) -> None:
        results = [result] if isinstance(result, ExecutionResult) else list(result)
        if not results:
            raise ValueError("need at least one scripted result")
        with self._lock:
            self._known_codes.add(code_digest(code.strip()))
            self._table[self._key(code, entry, args_literal)] = results

    def register_value(self, code: str, entry: str, args_literal: str, value) -> None:
        """Script a successful call returning ``value``."""
        self.register(
            code,
            entry,
            args_literal,
            ExecutionResult(status=ExecStatus.OK, output_canonical=canon.canonical(value)),
        )

    def run_function(
        self, code: str, entry: str, args_literal: str, limits: Optional[ExecLimits] = None
    ) -> ExecutionResult:
        with self._lock:
            self.call_count += 1
            digest = code_digest(code.strip())
            key = self._key(code, entry, args_literal)
            results = self._table.get(key)
            if results is None:
                if digest in self._known_codes:
                    return ExecutionResult(
                        status=ExecStatus.EXCEPTION,
                        error_text=f"NameError: entry not found: {entry}",
                    )
                raise FakeMissError(
                    f"no scripted outcome for entry {entry!r} args {args_literal!r}"
                )
            result = results.pop(0) if len(results) > 1 else results[0]
        return result

    def eval_literal(self, text: str, limits: Optional[ExecLimits] = None) -> ExecutionResult:
        self.call_count += 1
        try:
            return ExecutionResult(
                status=ExecStatus.OK, output_canonical=canon.canonical_of_args(text)
            )
        except canon.LiteralError as exc:
            return ExecutionResult(status=ExecStatus.EXCEPTION, error_text=str(exc))


def timeout_result(limits: ExecLimits, request_id: str = "") -> ExecutionResult:
    """A well-formed timeout outcome for scripting into fakes."""
    return ExecutionResult(
        status=ExecStatus.TIMEOUT,
        error_text="timed out",
        wall_ms=limits.wall_ms,
        request_id=request_id,
    )


class _Worker:
    """One guest subprocess plus its stdout reader thread."""

    def __init__(self, cmd: Sequence[str], scratch_dir: str, env_extra: Optional[dict] = None):
        env = dict(os.environ)
        env["HARNESS_SCRATCH"] = scratch_dir
        env["TMPDIR"] = scratch_dir  # guest tempfile usage stays in scratch
        if env_extra:
            env.update(env_extra)
        self.proc = subprocess.Popen(
            list(cmd),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            env=env,
            cwd=scratch_dir,
            start_new_session=True,
        )
        self.requests_served = 0
        self._lines: queue.Queue[Optional[str]] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF marker

    def send(self, frame: dict) -> None:
        assert self.proc.stdin is not None
        self.proc.stdin.write(json.dumps(frame, ensure_ascii=False) + "\n")
        self.proc.stdin.flush()

    def recv(self, timeout_s: float) -> tuple[str, Optional[str]]:
        """Next stdout line: ("line", text), ("eof", None) or ("timeout", None)."""
        try:
            line = self._lines.get(timeout=timeout_s)
        except queue.Empty:
            return ("timeout", None)
        if line is None:
            return ("eof", None)
        return ("line", line)

    def alive(self) -> bool:
        return self.proc.poll() is None

    def kill(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.kill()
            except OSError:
                pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            pass
        for stream in (self.proc.stdin, self.proc.stdout, self.proc.stderr):
            if stream:
                try:
                    stream.close()
                except OSError:
                    pass


def _pool_size(requested: Optional[int]) -> int:
    env_value = os.environ.get("SANDBOX_WORKERS")
    if env_value:
        return max(1, int(env_value))
    if requested is not None:
        return max(1, requested)
    return os.cpu_count() or 2


class WorkerPool(Executor):
    """Bounded pool of guest workers with per-request timeouts.

    Safe for concurrent use: callers check a worker out, exchange one
    frame, and check it back in. A worker that times out, crashes, or
    emits a malformed frame is killed and replaced, so the request after
    any failure gets a healthy worker.
    """

    def __init__(
        self,
        worker_cmd: Sequence[str] = DEFAULT_WORKER_CMD,
        size: Optional[int] = None,
        scratch_root: Optional[str] = None,
        default_limits: Optional[ExecLimits] = None,
    ):
        import tempfile

        self._cmd = tuple(worker_cmd)
        self._size = _pool_size(size)
        self._default_limits = default_limits or ExecLimits()
        self._scratch = scratch_root or tempfile.mkdtemp(prefix="codeforge-sandbox-")
        os.makedirs(self._scratch, exist_ok=True)
        self._idle: queue.Queue[_Worker] = queue.Queue()
        self._all: list[_Worker] = []
        self._lock = threading.Lock()
        self._closed = False
        self._request_counter = 0
        for _ in range(self._size):
            self._spawn()

    def _spawn(self) -> _Worker:
        worker = _Worker(self._cmd, self._scratch)
        with self._lock:
            self._all.append(worker)
        self._idle.put(worker)
        return worker

    def _retire(self, worker: _Worker) -> None:
        worker.kill()
        with self._lock:
            if worker in self._all:
                self._all.remove(worker)
        if not self._closed:
            self._spawn()

    def _next_request_id(self) -> str:
        with self._lock:
            self._request_counter += 1
            return f"req-{self._request_counter:08d}"

    def _exchange(self, request: ExecRequest) -> ExecutionResult:
        if self._closed:
            raise RuntimeError("pool is closed")
        worker = self._idle.get()
        limits = request.limits
        deadline_s = (limits.wall_ms + _RECV_GRACE_MS) / 1000.0
        started = time.monotonic()
        try:
            worker.send(
                {
                    "request_id": request.request_id,
                    "mode": request.mode,
                    "code": request.code,
                    "entry": request.entry,
                    "args_literal": request.args_literal,
                    "limits": limits.as_wire(),
                }
            )
        except (BrokenPipeError, OSError):
            self._retire(worker)
            return ExecutionResult(
                status=ExecStatus.PROTOCOL_ERROR,
                error_text="worker unreachable",
                wall_ms=_elapsed_ms(started),
                request_id=request.request_id,
            )
        kind, line = worker.recv(deadline_s)
        if kind == "timeout":  # no frame within wall + grace
            self._retire(worker)
            return ExecutionResult(
                status=ExecStatus.TIMEOUT,
                error_text="no response within wall limit + grace",
                wall_ms=max(_elapsed_ms(started), limits.wall_ms),
                request_id=request.request_id,
            )
        if kind == "eof":
            self._retire(worker)
            return ExecutionResult(
                status=ExecStatus.PROTOCOL_ERROR,
                error_text="worker exited mid-request",
                wall_ms=_elapsed_ms(started),
                request_id=request.request_id,
            )
        assert line is not None
        try:
            frame = json.loads(line)
            status = ExecStatus(frame["status"])
            result = ExecutionResult(
                status=status,
                output_canonical=frame.get("output_canonical"),
                error_text=frame.get("error_text"),
                wall_ms=int(frame.get("wall_ms", _elapsed_ms(started))),
                request_id=str(frame.get("request_id", "")),
            )
        except (ValueError, KeyError, TypeError, InvariantError) as exc:
            self._retire(worker)
            return ExecutionResult(
                status=ExecStatus.PROTOCOL_ERROR,
                error_text=f"malformed worker frame: {exc}",
                wall_ms=_elapsed_ms(started),
                request_id=request.request_id,
            )
        if result.request_id not in ("", request.request_id):
            self._retire(worker)
            return ExecutionResult(
                status=ExecStatus.PROTOCOL_ERROR,
                error_text="response id does not match request",
                wall_ms=_elapsed_ms(started),
                request_id=request.request_id,
            )
        worker.requests_served += 1
        if result.status is ExecStatus.PROTOCOL_ERROR or not worker.alive():
            self._retire(worker)
        elif worker.requests_served >= REQUESTS_PER_WORKER:
            self._retire(worker)
        else:
            self._idle.put(worker)
        return result

    def run_function(
        self, code: str, entry: str, args_literal: str, limits: Optional[ExecLimits] = None
    ) -> ExecutionResult:
        request = ExecRequest(
            request_id=self._next_request_id(),
            code=code,
            entry=entry,
            args_literal=args_literal,
            limits=limits or self._default_limits,
            mode="call",
        )
        return self._exchange(request)

    def eval_literal(self, text: str, limits: Optional[ExecLimits] = None) -> ExecutionResult:
        request = ExecRequest(
            request_id=self._next_request_id(),
            code="",
            entry="",
            args_literal=text,
            limits=limits or self._default_limits,
            mode="eval_literal",
        )
        return self._exchange(request)

    def _fresh_run(
        self, code: str, entry: str, args_literal: str, limits: Optional[ExecLimits]
    ) -> ExecutionResult:
        # Burn the worker that served this call so the next run cannot see
        # any state it left behind.
        result = self.run_function(code, entry, args_literal, limits)
        self.recycle_all_idle()
        return result

    def recycle_all_idle(self) -> None:
        """Replace every currently idle worker with a fresh one."""
        drained = []
        while True:
            try:
                drained.append(self._idle.get_nowait())
            except queue.Empty:
                break
        for worker in drained:
            self._retire(worker)

    def close(self) -> None:
        self._closed = True
        with self._lock:
            workers = list(self._all)
            self._all.clear()
        for worker in workers:
            worker.kill()


def with_request_id(result: ExecutionResult, request_id: str) -> ExecutionResult:
    return replace(result, request_id=request_id)


def _elapsed_ms(started: float) -> int:
    return int((time.monotonic() - started) * 1000)
