"""Kernel backend selection.

The compiled Cython module is used when it was built and imports cleanly;
otherwise (or when ``HSUNMIX_PURE_PYTHON=1``) the numpy twin is used.
``BACKEND`` names the active choice.
"""
import os

from . import _kernels_py

_FUNCS = ("swda_forward", "swda_backward", "im2col", "col2im",
          "maxpool_depth", "maxpool_depth_backward")


def _load_compiled():
    if os.environ.get("HSUNMIX_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_compiled = _load_compiled()
BACKEND = "cython" if _compiled is not None else "numpy"


def available_backends():
    return ["cython", "numpy"] if _compiled is not None else ["numpy"]


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    name = name or BACKEND
    if name == "numpy":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def use_backend(name):
    """Switch the module-level kernel functions to ``name``."""
    global BACKEND
    mod = get_backend(name)
    for fn in _FUNCS:
        globals()[fn] = getattr(mod, fn)
    BACKEND = name


use_backend(BACKEND)
