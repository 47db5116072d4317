"""Kernel backend selection.

The compiled extension is preferred when importable; the pure-numpy fallback
is always available. `IDLENET_BACKEND` forces the choice: `cython`, `python`,
or `auto` (default).
"""

from __future__ import annotations

import os

from . import _kernels_py

_forced = os.environ.get("IDLENET_BACKEND", "auto").strip().lower()

if _forced == "python":
    kernels = _kernels_py
elif _forced == "cython":
    from . import _kernels as kernels  # noqa: F401  (ImportError is the signal)
elif _forced == "auto":
    try:
        from . import _kernels as kernels
    except ImportError:
        kernels = _kernels_py
else:
    raise RuntimeError(f"IDLENET_BACKEND must be auto|cython|python, got {_forced!r}")

BACKEND = kernels.BACKEND_NAME

_num_threads = 1


def set_num_threads(n: int) -> None:
    """Set intra-op parallelism for the compiled backend (no effect on results)."""
    global _num_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _num_threads = int(n)


def get_num_threads() -> int:
    return _num_threads


def available_backends() -> list[str]:
    names = ["python"]
    try:
        from . import _kernels  # noqa: F401
        names.insert(0, "cython")
    except ImportError:
        pass
    return names
