"""Literal parsing and canonical value text, guest side.

Return values and stored reference outputs are compared as text by the
host, so rendering must be byte-stable across worker processes:

* dict keys sort by the canonical form of the key, sets sort by canonical
  form, so hash-seed randomization can never leak into output
* floats keep their shortest round-trip repr; ``20.0`` never collapses to
  ``20``
* strings are repr-quoted, containers use ordinary literal syntax, and a
  1-tuple keeps its trailing comma

Canonical text parses back to an equal value for every literal type, with
one documented exception: the empty set prints ``set()``, which is not a
literal. Argument parsing accepts literal expressions only (numbers,
strings, booleans, None, containers of those, unary minus); names and
calls are rejected.
"""

from __future__ import annotations

import ast
from typing import Any


class LiteralRejected(ValueError):
    """Input text is something other than a plain literal."""


def eval_literal_text(text: str) -> Any:
    try:
        return ast.literal_eval(text.strip())
    except (ValueError, TypeError, SyntaxError, MemoryError, RecursionError) as exc:
        raise LiteralRejected(f"non-literal: {exc}") from None


def parse_call_args(args_literal: str) -> tuple:
    """Comma-separated literals -> argument tuple; empty text -> ()."""
    text = args_literal.strip()
    if not text:
        return ()
    wrapped = f"({text})" if text.endswith(",") else f"({text},)"
    value = eval_literal_text(wrapped)
    assert isinstance(value, tuple)
    return value


def render(value: Any) -> str:
    """Canonical text of a runtime value."""
    if value is None or isinstance(value, (bool, int, float, complex, str, bytes)):
        return repr(value)
    if isinstance(value, list):
        return "[" + ", ".join(render(v) for v in value) + "]"
    if isinstance(value, tuple):
        if len(value) == 1:
            return "(" + render(value[0]) + ",)"
        return "(" + ", ".join(render(v) for v in value) + ")"
    if isinstance(value, dict):
        pairs = sorted((render(k), render(v)) for k, v in value.items())
        return "{" + ", ".join(f"{k}: {v}" for k, v in pairs) + "}"
    if isinstance(value, (set, frozenset)):
        if not value:
            return "set()" if isinstance(value, set) else "frozenset()"
        body = "{" + ", ".join(sorted(render(v) for v in value)) + "}"
        return body if isinstance(value, set) else f"frozenset({body})"
    return repr(value)  # non-literal objects stay inspectable, never equal


def render_args(args_literal: str) -> str:
    """Canonical text of an argument list: bare value if single, else tuple."""
    values = parse_call_args(args_literal)
    if len(values) == 1:
        return render(values[0])
    return render(values)
