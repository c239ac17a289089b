"""Selects the compiled core when importable, else the numpy implementation.

Set ``SDC_SENTINEL_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _core_py

core = _core_py
if os.environ.get("SDC_SENTINEL_BACKEND", "auto").lower() != "python":
    try:
        from . import _core as core  # type: ignore[no-redef]
    except ImportError:
        core = _core_py

BACKEND: str = core.BACKEND
inject_faults = core.inject_faults
draw_faults = core.draw_faults
mlp_forward = core.mlp_forward


def available_backends() -> dict:
    out = {"python": _core_py}
    try:
        from . import _core

        out["cython"] = _core
    except ImportError:
        pass
    return out
