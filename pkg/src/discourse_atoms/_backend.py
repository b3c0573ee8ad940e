"""Select the compiled kernels when available, else the pure-Python ones."""

import os

from . import _fallback

BACKEND = "python"
kernels = _fallback

if os.environ.get("ATOMS_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as kernels  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        kernels = _fallback


def get_kernels(name=None):
    """Return the kernel module for ``name`` ("cython", "python") or the default."""
    if name is None:
        return kernels
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
