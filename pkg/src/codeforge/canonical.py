"""Literal parsing and canonical value rendering, host side.

Gold outputs and graded answers are compared as text, so every value needs
exactly one rendering. The rules (shared with the guest worker, which is
the authority during real runs):

* mappings print with keys ordered by the canonical form of the key
* sets print sorted by canonical form
* floats use the shortest round-trip representation, so ``20.0`` and
  ``20`` stay distinct
* strings are repr-quoted with normalized escapes
* containers use guest literal syntax; a 1-tuple prints ``(x,)``

The empty set has no literal form and prints ``set()``; it is the one
value whose canonical text does not parse back.

Only literal expressions are accepted when parsing: numbers, strings,
booleans, None, and tuples/lists/dicts/sets of those, with unary minus.
Names and calls are rejected outright.
"""

from __future__ import annotations

import ast
from typing import Any


class LiteralError(ValueError):
    """Input text is not a pure literal expression."""


def parse_literal(text: str) -> Any:
    """Parse one literal expression, rejecting anything code-bearing."""
    try:
        return ast.literal_eval(text.strip())
    except (ValueError, TypeError, SyntaxError, MemoryError, RecursionError) as exc:
        raise LiteralError(f"non-literal: {exc}") from None


def parse_args(args_literal: str) -> tuple:
    """Parse a comma-separated argument list into a tuple of values.

    Empty or whitespace-only text means a zero-argument call.
    """
    text = args_literal.strip()
    if not text:
        return ()
    value = parse_literal(f"({text},)") if not text.endswith(",") else parse_literal(f"({text})")
    assert isinstance(value, tuple)
    return value


def canonical(value: Any) -> str:
    """Render a value in its canonical text form."""
    if value is None or isinstance(value, (bool, int, float, complex, str, bytes)):
        return repr(value)
    if isinstance(value, list):
        return "[" + ", ".join(canonical(v) for v in value) + "]"
    if isinstance(value, tuple):
        if len(value) == 1:
            return "(" + canonical(value[0]) + ",)"
        return "(" + ", ".join(canonical(v) for v in value) + ")"
    if isinstance(value, dict):
        items = sorted(((canonical(k), canonical(v)) for k, v in value.items()))
        return "{" + ", ".join(f"{k}: {v}" for k, v in items) + "}"
    if isinstance(value, (set, frozenset)):
        if not value:
            return "set()" if isinstance(value, set) else "frozenset()"
        body = "{" + ", ".join(sorted(canonical(v) for v in value)) + "}"
        return body if isinstance(value, set) else f"frozenset({body})"
    # Last resort for non-literal return values (objects, functions, ...):
    # repr keeps the result inspectable even though it will never compare
    # equal to a stored gold output.
    return repr(value)


def canonical_of_args(args_literal: str) -> str:
    """Canonical rendering of an argument list.

    A single argument renders as the bare value; multiple arguments render
    as a tuple. Mirrors how gold outputs of multi-argument calls are shown.
    """
    values = parse_args(args_literal)
    if len(values) == 1:
        return canonical(values[0])
    return canonical(values)


def parse_canonical(text: str) -> Any:
    """Parse canonical text back into a value, accepting ``set()``."""
    stripped = text.strip()
    if stripped == "set()":
        return set()
    if stripped == "frozenset()":
        return frozenset()
    return parse_literal(stripped)


def is_truthy_canonical(text: str) -> bool:
    """Truthiness of a canonical value text.

    Unparseable text (a repr of some non-literal object) counts as truthy:
    the value existed, it just has no literal form.
    """
    try:
        return bool(parse_canonical(text))
    except LiteralError:
        return True
