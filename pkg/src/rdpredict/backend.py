"""Kernel backend selection: compiled extension when available, else pure Python.

``RDPREDICT_BACKEND`` overrides the choice: ``compiled`` (fail if missing),
``python``, or ``auto`` (default).
"""
import os

from . import _kernels_py

_REQUESTED = os.environ.get("RDPREDICT_BACKEND", "auto").lower()

try:
    from . import _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

if _REQUESTED == "python":
    kernels = _kernels_py
elif _REQUESTED == "compiled":
    if _kernels_c is None:
        raise ImportError(
            "RDPREDICT_BACKEND=compiled but the extension is not built; "
            "reinstall the package or use RDPREDICT_BACKEND=python")
    kernels = _kernels_c
elif _REQUESTED == "auto":
    kernels = _kernels_c if _kernels_c is not None else _kernels_py
else:
    raise ImportError(f"unknown RDPREDICT_BACKEND value: {_REQUESTED!r}")

backend_name = "compiled" if kernels is _kernels_c else "python"


def get_backend(name):
    """Fetch a backend module by name, independent of the import-time choice."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _kernels_c is None:
            raise ImportError("compiled backend unavailable (extension not built)")
        return _kernels_c
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    names = ["python"]
    if _kernels_c is not None:
        names.append("compiled")
    return names
