"""Prompt template assets and their renderer.

Templates are plain text files with ``{name}`` placeholders. Rendering
replaces only the names actually supplied and leaves every other brace
untouched, since templates and substituted values are full of literal
braces (dict literals, code).
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    path = resources.files(__name__).joinpath(f"{name}.txt")
    with path.open("r", encoding="utf-8") as fh:
        return fh.read()


def render_template(template: str, **values) -> str:
    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if name in values:
            return str(values[name])
        return match.group(0)

    return re.sub(r"\{([a-z_]+)\}", substitute, template)
