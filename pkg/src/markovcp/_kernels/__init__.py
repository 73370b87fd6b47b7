"""Backend selection for the candidate-scoring kernel.

The compiled extension is used when it imports; otherwise the pure-Python
twin is used.  Set ``MARKOVCP_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
score_candidates = _pykernels.score_candidates

if os.environ.get("MARKOVCP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        _ckernels = None
    else:
        BACKEND = "cython"
        score_candidates = _ckernels.score_candidates
else:
    _ckernels = None

MAX_RANKED_BLOCKS = _pykernels.MAX_RANKED_BLOCKS


def backends():
    """Mapping of available backend name to its ``score_candidates``."""
    out = {"python": _pykernels.score_candidates}
    if _ckernels is not None:
        out["cython"] = _ckernels.score_candidates
    return out
