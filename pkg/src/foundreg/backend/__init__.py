"""Kernel backend selection.

The compiled extension is preferred when importable; set
FOUNDREG_PURE_PYTHON=1 to force the numpy fallback.  Both expose the
same four functions with identical numerics.
"""
import os

from . import pure

if os.environ.get("FOUNDREG_PURE_PYTHON", "").strip() in ("1", "true", "yes"):
    _impl = pure
else:
    try:
        from . import _fast as _impl
    except ImportError:
        _impl = pure

name = _impl.name
trilinear_sample = _impl.trilinear_sample
nearest_sample = _impl.nearest_sample
jacobian_det = _impl.jacobian_det
directed_min_dists = _impl.directed_min_dists
