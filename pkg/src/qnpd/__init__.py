"""Quasi-Newton primal-dual solvers with line search.

Subpackages and modules:
    metric   limited-memory compact quasi-Newton metric
    prox     Euclidean proximal operators and generalized Jacobians
    mprox    proximal mappings under low-rank metrics (semi-smooth Newton)
    solver   saddle-point solvers (line-search, fixed-step, accelerated)
    problems Poisson TV deblurring and synthetic test problems
    kernels  hot numerical kernels (compiled core with NumPy fallback)
    cli      experiment driver
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
