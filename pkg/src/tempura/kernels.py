"""Kernel backend selection.

The compiled extension is used when it imports; set ``TEMPURA_PURE_PYTHON=1``
to force the pure-Python fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("TEMPURA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

adamw_update = _impl.adamw_update
box_iou = _impl.box_iou
match_ranked = _impl.match_ranked

__all__ = ["BACKEND", "adamw_update", "box_iou", "match_ranked"]
