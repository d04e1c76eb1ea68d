"""Hot numerical kernels with a compiled core and a NumPy fallback.

The Cython extension (_cyops) is preferred when it was built; set
QNPD_PURE_PYTHON=1 to force the NumPy implementations. The selected
backend name is exposed as BACKEND.
"""

import os

from . import _npops

if os.environ.get("QNPD_PURE_PYTHON", "0") == "1":
    _impl = _npops
    BACKEND = "numpy"
else:
    try:
        from . import _cyops as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _npops
        BACKEND = "numpy"

grad2d = _impl.grad2d
div2d = _impl.div2d
project_groups_l2 = _impl.project_groups_l2
kl_sum = _impl.kl_sum
kl_grad_factor = _impl.kl_grad_factor
convolve2d_wrap = _impl.convolve2d_wrap
correlate2d_wrap = _impl.correlate2d_wrap

__all__ = [
    "BACKEND",
    "grad2d",
    "div2d",
    "project_groups_l2",
    "kl_sum",
    "kl_grad_factor",
    "convolve2d_wrap",
    "correlate2d_wrap",
]
