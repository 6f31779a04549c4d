"""Selects the compiled kernels when available, the Python mirror otherwise."""

import os

from . import _kernels_py

KIND_CODES = {"gibbs": 0, "quad": 1, "tsallis": 2, "logbar": 3}


def _load():
    if os.environ.get("REGDYN_PURE_PYTHON", "") not in ("", "0"):
        return _kernels_py, "python"
    try:
        from . import _kernels
    except ImportError:
        return _kernels_py, "python"
    return _kernels, "compiled"


kernels, BACKEND = _load()


def get(name: str | None = None):
    """Kernel module by name (``"compiled"`` or ``"python"``), default the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
