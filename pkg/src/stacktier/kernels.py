"""Backend selection for the hot loops.

The compiled extension is used when importable; set ``STACKTIER_PURE=1`` to
force the numpy fallback.
"""
from __future__ import annotations

import os

from . import _fallback

if os.environ.get("STACKTIER_PURE", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _impl = _fallback

BACKEND: str = _impl.BACKEND
build_tree = _impl.build_tree
ensemble_apply = _impl.ensemble_apply
pegasos = _impl.pegasos

MODE_GINI = 0
MODE_NEWTON = 1


def backends() -> dict:
    """Map backend name to module for every backend available here."""
    out = {"python": _fallback}
    try:
        from . import _kernels  # type: ignore[attr-defined]
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
