"""Hot-kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``SUBGROUP_FORGE_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from subgroup_forge import _kernels_py

if os.environ.get("SUBGROUP_FORGE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from subgroup_forge import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

perm_keys = _impl.perm_keys
cayley_table = _impl.cayley_table
first_match = _impl.first_match
close_pairs = _impl.close_pairs
scatter_add_cols = _impl.scatter_add_cols

__all__ = [
    "BACKEND",
    "perm_keys",
    "cayley_table",
    "first_match",
    "close_pairs",
    "scatter_add_cols",
]
