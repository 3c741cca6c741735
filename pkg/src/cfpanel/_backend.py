"""Kernel backend selection.

The compiled extension is preferred; set ``CFPANEL_PURE_PYTHON=1`` to force the
pure-Python kernels (useful for debugging and for the benchmark).
"""

import os
from types import ModuleType

from cfpanel import _kernels_py

try:
    from cfpanel import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on build
    _compiled = None


def get_kernels(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` ("compiled", "python", or default)."""
    if name is None:
        forced = os.environ.get("CFPANEL_PURE_PYTHON", "").strip().lower()
        name = "python" if forced not in ("", "0", "false", "no") else "auto"
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; reinstall with Cython available")
        return _compiled
    if name == "auto":
        return _compiled if _compiled is not None else _kernels_py
    raise ValueError(f"unknown kernel backend {name!r}")


HAVE_COMPILED = _compiled is not None
kernels = get_kernels()
BACKEND = "compiled" if kernels is _compiled else "python"
