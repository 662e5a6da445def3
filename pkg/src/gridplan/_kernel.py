"""Selects the Newton-Raphson kernel at import time.

Prefers the compiled extension and falls back to the numpy implementation.
Set GRIDPLAN_PF_BACKEND=python or =cython to force one (cython raises if the
extension is not built).
"""

import os

_requested = os.environ.get("GRIDPLAN_PF_BACKEND", "auto")

if _requested == "python":
    from . import _nr_py as _impl
elif _requested == "cython":
    from . import _nr_cy as _impl  # type: ignore[attr-defined]
else:
    try:
        from . import _nr_cy as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _nr_py as _impl

newton_polar = _impl.newton_polar
BACKEND = _impl.BACKEND
