"""Select the simulation kernel lane at import time.

The compiled extension is used when importable; setting FVQSD_PURE_PYTHON=1
forces the NumPy lane.  Both lanes implement the same stream addressing and
stopping protocol, so drivers never care which one is active.
"""

import os

from . import _kernels_py

if os.environ.get("FVQSD_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels_c as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.NAME

fv_advance = _impl.fv_advance
coupled_advance = _impl.coupled_advance
paths_advance = _impl.paths_advance


def get_backend(name):
    """Fetch a lane by name ('numpy' or 'cython'); used by the benchmark."""
    if name == "numpy":
        return _kernels_py
    if name == "cython":
        from . import _kernels_c
        return _kernels_c
    raise ValueError(f"unknown backend {name!r}")
