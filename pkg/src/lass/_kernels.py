"""Backend selection for the hot kernels.

The compiled ``_ckernels`` module is used when it was built; otherwise (or
when ``LASS_PURE_PYTHON`` is set to a non-empty value) the NumPy versions in
``_pykernels`` are used. ``BACKEND`` names the active choice.
"""

import os

from . import _pykernels

if os.environ.get("LASS_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "python" if _impl is _pykernels else "cython"

nearest_code = _impl.nearest_code
sample_rows = _impl.sample_rows
top_indices = _impl.top_indices


def available_backends():
    """Map of backend name to kernel module for every importable backend."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
