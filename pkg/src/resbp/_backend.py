"""Kernel selection: the compiled extension when importable, else pure Python.

Set ``RESBP_PURE=1`` to force the pure-Python kernels.
"""

import importlib
import os

from . import _pykernels


def _load():
    if os.environ.get("RESBP_PURE"):
        return _pykernels
    try:
        return importlib.import_module("resbp._kernels")
    except ImportError:
        return _pykernels


kernels = _load()
BACKEND = kernels.NAME


def get_kernels(name=None):
    """Return the kernel module by name (``"cython"`` or ``"python"``); default is the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "cython":
        return importlib.import_module("resbp._kernels")
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        importlib.import_module("resbp._kernels")
        names.insert(0, "cython")
    except ImportError:
        pass
    return names
