"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``CLAMDET_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("CLAMDET_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

triplet_hinge = _impl.triplet_hinge
elo_sequential = _impl.elo_sequential

__all__ = ["BACKEND", "triplet_hinge", "elo_sequential"]
