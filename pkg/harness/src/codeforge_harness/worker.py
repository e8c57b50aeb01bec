"""Worker loop: one JSON request per stdin line, one JSON response out.

Frame shapes (field names are the wire contract with the host pool):

    request:  {request_id, mode, code, entry, args_literal,
               limits: {wall_ms, cpu_ms, memory_mb, max_output_bytes}}
    response: {request_id, status, output_canonical?, error_text?, wall_ms}

Status is one of ok / exception / timeout / out_of_memory / protocol_error.
Only unreadable frames produce protocol_error; everything guest code does
wrong becomes an exception response with the final traceback line.

Guest containment is deliberately lightweight (OS process + rlimits, not a
VM): fd 1 is rebound to stderr at startup so guest prints can never reach
the protocol stream, wall/cpu ceilings are interval timers that interrupt
the call, address space is capped with RLIMIT_AS, and an audit hook turns
socket use or write-opens outside the scratch directory into ordinary
exceptions.
"""

from __future__ import annotations

import json
import math
import os
import signal
import sys
import time
import traceback
from typing import Any, Optional, TextIO

from . import canon

DEFAULT_LIMITS = {
    "wall_ms": 5000,
    "cpu_ms": 4000,
    "memory_mb": 512,
    "max_output_bytes": 65536,
}


class GuestTimeout(BaseException):
    """Raised from a timer signal while guest code is running.

    BaseException so guest ``except Exception`` blocks cannot swallow it.
    """

    def __init__(self, kind: str):
        super().__init__(kind)
        self.kind = kind


class _Limiter:
    """Interval timers + rlimits around one guest call."""

    def __init__(self, limits: dict):
        self.wall_s = max(limits["wall_ms"], 1) / 1000.0
        self.cpu_s = max(limits["cpu_ms"], 1) / 1000.0
        self.memory_bytes = limits["memory_mb"] * 1024 * 1024

    def __enter__(self) -> "_Limiter":
        signal.signal(signal.SIGALRM, self._on_wall)
        signal.signal(signal.SIGPROF, self._on_cpu)
        signal.setitimer(signal.ITIMER_REAL, self.wall_s)
        signal.setitimer(signal.ITIMER_PROF, self.cpu_s)
        self._set_memory_limit(self.memory_bytes)
        return self

    def __exit__(self, *exc) -> None:
        signal.setitimer(signal.ITIMER_REAL, 0.0)
        signal.setitimer(signal.ITIMER_PROF, 0.0)
        signal.signal(signal.SIGALRM, signal.SIG_DFL)
        signal.signal(signal.SIGPROF, signal.SIG_DFL)

    @staticmethod
    def _on_wall(signum, frame):
        raise GuestTimeout("wall")

    @staticmethod
    def _on_cpu(signum, frame):
        raise GuestTimeout("cpu")

    @staticmethod
    def _set_memory_limit(soft_bytes: int) -> None:
        try:
            import resource

            _, hard = resource.getrlimit(resource.RLIMIT_AS)
            if hard != resource.RLIM_INFINITY and soft_bytes > hard:
                soft_bytes = hard
            resource.setrlimit(resource.RLIMIT_AS, (soft_bytes, hard))
        except (ImportError, ValueError, OSError):
            pass  # platform without rlimits; timers still apply


def _scratch_dir() -> str:
    return os.path.realpath(os.environ.get("HARNESS_SCRATCH", os.getcwd()))


_WRITE_MODE_CHARS = frozenset("wax+")


def install_guards(scratch: Optional[str] = None) -> None:
    """Audit-hook guards: no sockets, no write-opens outside scratch."""
    allowed_root = scratch or _scratch_dir()

    def hook(event: str, args: tuple) -> None:
        if event.startswith("socket.") and event != "socket.gethostname":
            raise RuntimeError(f"network access is disabled in the sandbox ({event})")
        if event == "open":
            path, mode = args[0], args[1]
            wants_write = bool(_WRITE_MODE_CHARS & set(mode)) if isinstance(mode, str) else False
            if not isinstance(mode, str) and isinstance(args[2], int):
                flags = args[2]
                wants_write = bool(flags & (os.O_WRONLY | os.O_RDWR | getattr(os, "O_APPEND", 0)))
            if wants_write and isinstance(path, (str, bytes)):
                target = os.path.realpath(os.fsdecode(path))
                if not target.startswith(allowed_root + os.sep) and target != allowed_root:
                    raise PermissionError(f"write outside scratch dir rejected: {target}")
        if event in ("os.remove", "os.rename", "os.rmdir"):
            target = os.path.realpath(os.fsdecode(args[0]))
            if not target.startswith(allowed_root + os.sep):
                raise PermissionError(f"delete outside scratch dir rejected: {target}")

    sys.addaudithook(hook)


def _error_tail(exc: BaseException) -> str:
    lines = traceback.format_exception_only(type(exc), exc)
    return lines[-1].strip() if lines else repr(exc)


def _limits_of(frame: dict) -> dict:
    limits = dict(DEFAULT_LIMITS)
    raw = frame.get("limits")
    if isinstance(raw, dict):
        for key in limits:
            if isinstance(raw.get(key), int) and raw[key] > 0:
                limits[key] = raw[key]
    return limits


def _run_call(frame: dict, limits: dict) -> dict:
    code = frame.get("code", "")
    entry = frame.get("entry", "")
    namespace: dict[str, Any] = {"__name__": "__guest__"}
    started = time.monotonic()
    timer_kind: Optional[str] = None
    try:
        with _Limiter(limits):
            exec(compile(code, "<guest>", "exec"), namespace)
            fn = namespace.get(entry)
            if not callable(fn):
                raise NameError(f"entry not found: {entry}")
            args = canon.parse_call_args(frame.get("args_literal", ""))
            value = fn(*args)
            output = canon.render(value)
    except GuestTimeout as exc:
        timer_kind = exc.kind
        floor_ms = limits["cpu_ms"] if exc.kind == "cpu" else limits["wall_ms"]
        return {
            "status": "timeout",
            "error_text": f"{exc.kind} limit exceeded",
            "wall_ms": max(_elapsed_ms(started), floor_ms),
        }
    except MemoryError:
        return {
            "status": "out_of_memory",
            "error_text": "MemoryError: address-space limit reached",
            "wall_ms": _elapsed_ms(started),
        }
    except canon.LiteralRejected as exc:
        return {"status": "exception", "error_text": str(exc), "wall_ms": _elapsed_ms(started)}
    except BaseException as exc:  # noqa: BLE001 - everything guest-raised
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        return {"status": "exception", "error_text": _error_tail(exc), "wall_ms": _elapsed_ms(started)}
    if len(output.encode("utf-8", errors="replace")) > limits["max_output_bytes"]:
        return {
            "status": "exception",
            "error_text": f"output too large: over {limits['max_output_bytes']} bytes",
            "wall_ms": _elapsed_ms(started),
        }
    return {"status": "ok", "output_canonical": output, "wall_ms": _elapsed_ms(started)}


def _run_eval(frame: dict, limits: dict) -> dict:
    started = time.monotonic()
    try:
        with _Limiter(limits):
            output = canon.render_args(frame.get("args_literal", ""))
    except GuestTimeout as exc:
        return {
            "status": "timeout",
            "error_text": f"{exc.kind} limit exceeded",
            "wall_ms": max(_elapsed_ms(started), limits["wall_ms"]),
        }
    except canon.LiteralRejected as exc:
        return {"status": "exception", "error_text": str(exc), "wall_ms": _elapsed_ms(started)}
    return {"status": "ok", "output_canonical": output, "wall_ms": _elapsed_ms(started)}


def handle_request(frame: Any) -> dict:
    """One request frame in, one response frame out. Never raises."""
    if not isinstance(frame, dict) or not isinstance(frame.get("request_id", ""), str):
        return {
            "request_id": "",
            "status": "protocol_error",
            "error_text": "unreadable request frame",
            "wall_ms": 0,
        }
    request_id = frame.get("request_id", "")
    mode = frame.get("mode")
    limits = _limits_of(frame)
    if mode == "call":
        response = _run_call(frame, limits)
    elif mode == "eval_literal":
        response = _run_eval(frame, limits)
    else:
        response = {
            "status": "protocol_error",
            "error_text": f"unknown mode: {mode!r}",
            "wall_ms": 0,
        }
    response["request_id"] = request_id
    return response


def _elapsed_ms(started: float) -> int:
    return int(math.ceil((time.monotonic() - started) * 1000))


def serve_loop(stdin: TextIO, proto_out: TextIO) -> int:
    """Process frames until stdin closes; returns the exit code."""
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            frame = json.loads(line)
        except json.JSONDecodeError:
            frame = None
        if frame is None:
            response = {
                "request_id": "",
                "status": "protocol_error",
                "error_text": "unreadable request frame",
                "wall_ms": 0,
            }
        else:
            response = handle_request(frame)
        try:
            proto_out.write(json.dumps(response, ensure_ascii=False) + "\n")
            proto_out.flush()
        except (BrokenPipeError, OSError):
            return 1  # host is gone; nothing sensible left to do
        except (TypeError, ValueError, UnicodeEncodeError):
            # response itself is unserializable: report and keep serving
            fallback = {
                "request_id": response.get("request_id", ""),
                "status": "exception",
                "error_text": "result not representable in the wire encoding",
                "wall_ms": response.get("wall_ms", 0),
            }
            proto_out.write(json.dumps(fallback) + "\n")
            proto_out.flush()
    return 0


def main() -> int:
    scratch = _scratch_dir()
    os.makedirs(scratch, exist_ok=True)
    try:
        os.chdir(scratch)
    except OSError:
        pass
    # Rebind fd 1 to stderr so guest prints (even C-level) bypass the
    # protocol; the protocol writes through a private dup of the real fd.
    proto_fd = os.dup(1)
    os.dup2(2, 1)
    proto_out = os.fdopen(proto_fd, "w", encoding="utf-8", buffering=1)
    install_guards(scratch)
    try:
        return serve_loop(sys.stdin, proto_out)
    except KeyboardInterrupt:
        return 130
    except UnicodeDecodeError:
        return 1  # unrecoverable stream corruption; host will recycle
