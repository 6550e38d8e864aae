"""Backend selection for the hot kernels.

The compiled extension is used when it imports; setting
``RELU_UNWRAP_PURE=1`` forces the pure Python fallback. Both backends share
signatures and tie-breaking, so results agree up to floating-point summation
order in ``lasso_cd``.
"""
from __future__ import annotations

import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _fallback}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

if _compiled is not None and os.environ.get("RELU_UNWRAP_PURE") != "1":
    BACKEND = "cython"
else:
    BACKEND = "python"

_impl = BACKENDS[BACKEND]
group_rows = _impl.group_rows
ward_tree = _impl.ward_tree
lasso_cd = _impl.lasso_cd


def get_backend(name: str):
    """Module implementing ``group_rows``, ``ward_tree`` and ``lasso_cd`` for ``name``."""
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
