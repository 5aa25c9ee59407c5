"""Stepper backend selection.

The compiled extension is preferred when it imported cleanly; setting the
environment variable MGTLAB_BACKEND=python forces the numpy fallback (useful
for the parity tests and the benchmark). Selection happens once, at import.
"""

from __future__ import annotations

import os

from . import _stepper_py

_forced = os.environ.get("MGTLAB_BACKEND", "").strip().lower()

_compiled = None
if _forced not in ("python", "py", "fallback"):
    try:
        from . import _stepper as _compiled  # type: ignore[no-redef]
    except ImportError:
        _compiled = None

if _compiled is not None:
    BACKEND = "cython"
    _impl = _compiled
else:
    BACKEND = "python"
    _impl = _stepper_py

midpoint_loop = _impl.midpoint_loop
midpoint_loop_tq = _impl.midpoint_loop_tq
rk4_loop = _stepper_py.rk4_loop


def available_backends() -> dict:
    """Name -> kernel module, for parity tests and benchmarks."""
    out = {"python": _stepper_py}
    if _compiled is not None:
        out["cython"] = _compiled
    else:
        try:
            from . import _stepper  # noqa: F401

            out["cython"] = _stepper
        except ImportError:
            pass
    return out
