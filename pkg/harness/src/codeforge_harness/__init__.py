"""Guest-side worker for the codeforge sandbox pool.

Launched as a subprocess with no arguments (``python -m codeforge_harness``).
Env var HARNESS_SCRATCH names the writable scratch directory. Strictly
single-threaded: one request at a time; the host achieves concurrency by
running many workers.
"""

from .canon import eval_literal_text, parse_call_args, render, render_args
from .worker import handle_request, serve_loop

__version__ = "0.1.0"

__all__ = [
    "eval_literal_text",
    "parse_call_args",
    "render",
    "render_args",
    "handle_request",
    "serve_loop",
    "__version__",
]
