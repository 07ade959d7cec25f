"""Kernel backend selection: compiled extension if built, else pure Python.

Set ``FEDREC_PURE_PYTHON=1`` to force the fallback (used by the parity tests
and the benchmark).  Both backends are bit-identical, so the choice only
affects speed.
"""

import os

from . import fallback

BACKEND = "python"
_impl = fallback

if not os.environ.get("FEDREC_PURE_PYTHON"):
    try:
        from . import _sgd as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

svd_steps = _impl.svd_steps
bpr_steps = _impl.bpr_steps


def available_backends():
    """Map of importable backend name -> kernel module."""
    backends = {"python": fallback}
    try:
        from . import _sgd as _compiled
    except ImportError:
        pass
    else:
        backends["cython"] = _compiled
    return backends
