"""Hot loops, compiled when the Cython extension is built, NumPy otherwise.

Set ``ATTNWNET_PURE_PYTHON=1`` to force the NumPy versions.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("ATTNWNET_PURE_PYTHON", "") != "1":
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

affinity_edges = _impl.affinity_edges
crf_messages = _impl.crf_messages
ball_offsets = _pykernels.ball_offsets


def backends():
    """Available implementations keyed by name."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
