"""Hot-loop dispatch: the Cython extension when built, numpy otherwise.

Set ``TWOHOP_PURE_PYTHON=1`` to force the numpy fallback.
"""
from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
if os.environ.get("TWOHOP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _fallback
    else:
        BACKEND = "cython"
else:
    _impl = _fallback

scatter_rows = _impl.scatter_rows
pair_scores = _impl.pair_scores
best_codeword = _impl.best_codeword
