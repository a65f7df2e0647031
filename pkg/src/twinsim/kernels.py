"""Kernel selection: the compiled extension when importable, else pure Python.

Set ``TWINSIM_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
fifo_deliver = _kernels_py.fifo_deliver

if not os.environ.get("TWINSIM_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        fifo_deliver = _compiled.fifo_deliver
        BACKEND = "cython"

__all__ = ["BACKEND", "fifo_deliver"]
