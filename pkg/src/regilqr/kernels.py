"""Selects the LQR kernel backend at import.

The compiled module is used when it was built, unless the environment sets
``REGILQR_PURE_PYTHON=1``.
"""
import os

from . import _lqr_py

BACKEND = "python"
backward_pass_arrays = _lqr_py.backward_pass_arrays
rollout_lqr_arrays = _lqr_py.rollout_lqr_arrays

if os.environ.get("REGILQR_PURE_PYTHON", "") != "1":
    try:
        from . import _lqr_c
    except ImportError:
        _lqr_c = None
    if _lqr_c is not None:
        BACKEND = "cython"
        backward_pass_arrays = _lqr_c.backward_pass_arrays
        rollout_lqr_arrays = _lqr_c.rollout_lqr_arrays


def available_backends() -> dict:
    """Map of backend name to ``(backward_pass_arrays, rollout_lqr_arrays)``."""
    out = {"python": (_lqr_py.backward_pass_arrays, _lqr_py.rollout_lqr_arrays)}
    try:
        from . import _lqr_c as c
    except ImportError:
        return out
    out["cython"] = (c.backward_pass_arrays, c.rollout_lqr_arrays)
    return out
