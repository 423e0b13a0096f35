"""Regularized iterative LQR and DDP with certified regularization schedules."""
__version__ = "0.1.0"

from . import analysis, cost, dense_ref, dyn, feedlin, solver  # noqa: E402,F401
from .kernels import BACKEND  # noqa: E402,F401
