"""Backend selection for the per-step kernels.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``ISDFILTER_PURE_PYTHON`` is set to a non-empty value,
the pure-Python mirror is used.  Both expose the same functions.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_py
from ._kernels_py import (  # noqa: F401  (re-exported constants)
    MAX_ITER,
    MODE_ESD,
    MODE_ISD,
    MODE_ISD_CLOSED,
    NO_ROOT,
    NONFINITE,
    OK,
)

STATUS_NAMES = {OK: "ok", MAX_ITER: "max_iterations", NONFINITE: "nonfinite", NO_ROOT: "no_root"}


def _load_compiled() -> ModuleType | None:
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        return None
    return _kernels


_compiled = _load_compiled()

if _compiled is not None and not os.environ.get("ISDFILTER_PURE_PYTHON"):
    backend: ModuleType = _compiled
    BACKEND = "cython"
else:
    backend = _kernels_py
    BACKEND = "python"


def get_backend(name: str | None = None) -> ModuleType:
    """Return a kernel module by name (``"cython"`` or ``"python"``).

    ``None`` returns the active backend.
    """
    if name is None:
        return backend
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("the compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def compiled_available() -> bool:
    return _compiled is not None
