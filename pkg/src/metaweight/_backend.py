"""Pick the compiled body kernels when available, else the numpy fallback.

Set ``METAWEIGHT_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _body_py

BACKEND = "python"
kernels = _body_py

if os.environ.get("METAWEIGHT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _body_ext
    except ImportError:
        pass
    else:
        kernels = _body_ext
        BACKEND = "cython"


def get_kernels(name: str | None = None):
    """Return a kernel module by name (``"python"``/``"cython"``) or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _body_py
    if name == "cython":
        from . import _body_ext
        return _body_ext
    raise ValueError(f"unknown backend {name!r}")
