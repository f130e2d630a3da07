"""Optimal transport between attributed graphs.

The Frank-Wolfe loop and the exact transport solver run in a compiled
extension when it is available; otherwise (or with ``PGRMOOD_PURE_PYTHON=1``)
a pure-Python twin is used.
"""

import os

from . import _kernels_py

if os.environ.get("PGRMOOD_PURE_PYTHON"):
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels
    except ImportError:  # extension not built
        kernels = _kernels_py

BACKEND = "python" if kernels is _kernels_py else "compiled"


def get_kernels(name=None):
    """Kernel module by name (``"compiled"`` or ``"python"``); default is the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


from .fgw import (  # noqa: E402
    Coupling,
    FgwConfig,
    fgw_distance,
    fgw_gradient,
    linear_ot,
    similarity,
    sinkhorn,
)

__all__ = [
    "BACKEND",
    "Coupling",
    "FgwConfig",
    "fgw_distance",
    "fgw_gradient",
    "get_kernels",
    "linear_ot",
    "similarity",
    "sinkhorn",
]
