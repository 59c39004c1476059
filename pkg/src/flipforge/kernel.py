"""Engine selection: compiled extension if importable, else pure Python.

Set ``FLIPFORGE_PURE=1`` to force the pure-Python engine.
"""

from __future__ import annotations

import os

from . import _pykernel

_impl = _pykernel
COMPILED = False
if os.environ.get("FLIPFORGE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernel as _impl  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:
        _impl = _pykernel

inject_batch = _impl.inject_batch
perturb_batch = _impl.perturb_batch

ST_DONE = _pykernel.ST_DONE
ST_CRASH = _pykernel.ST_CRASH
ST_TIMEOUT = _pykernel.ST_TIMEOUT
ST_DETECTED = _pykernel.ST_DETECTED
ST_CONVERGED = _pykernel.ST_CONVERGED
ST_NOTRUN = _pykernel.ST_NOTRUN


def engine_name() -> str:
    return "compiled" if COMPILED else "python"


def get_engine(name: str):
    """Return the module implementing ``name`` ("compiled" or "python")."""
    if name == "python":
        return _pykernel
    from . import _ckernel

    return _ckernel
