"""Kernel backend selection.

The compiled extension ``dpdtune._ckernels`` is used when it imports;
otherwise the numpy fallback in ``dpdtune._pykernels`` is. Set
``DPDTUNE_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_AVAILABLE = {"python": _pykernels}
if _ckernels is not None:
    _AVAILABLE["cython"] = _ckernels

_state = {"name": None, "threads": 1}


def available() -> list[str]:
    return sorted(_AVAILABLE)


def set_backend(name: str) -> None:
    if name == "auto":
        name = "cython" if "cython" in _AVAILABLE else "python"
    if name not in _AVAILABLE:
        raise ValueError(f"backend {name!r} unavailable; have {available()}")
    _state["name"] = name


def backend_name() -> str:
    return _state["name"]


def kernels():
    return _AVAILABLE[_state["name"]]


def set_threads(n: int) -> None:
    _state["threads"] = max(1, int(n))


def threads() -> int:
    return _state["threads"]


_requested = os.environ.get("DPDTUNE_BACKEND", "auto").strip().lower() or "auto"
try:
    set_backend(_requested)
except ValueError:
    log.warning("DPDTUNE_BACKEND=%s unavailable, falling back to auto", _requested)
    set_backend("auto")
