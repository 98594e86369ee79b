"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise, or when
``ROOMAUTH_PURE_PYTHON`` is set to a non-empty value, the numpy fallback is.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _fallback

try:
    from . import _core
except ImportError:  # extension not built
    _core = None


def available() -> list[str]:
    names = ["python"]
    if _core is not None:
        names.insert(0, "compiled")
    return names


def get(name: str | None = None) -> ModuleType:
    """Kernel module by name (``"compiled"`` or ``"python"``); default is the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _fallback
    if name == "compiled":
        if _core is None:
            raise ImportError("compiled kernels are not built")
        return _core
    raise ValueError(f"unknown backend {name!r}")


kernels: ModuleType = _fallback if (_core is None or os.environ.get("ROOMAUTH_PURE_PYTHON")) else _core
NAME: str = kernels.NAME
