"""Estimator kernels: compiled when available, pure Python otherwise.

Set ``ONPOLICY_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels as python_backend

compiled_backend = None
if not os.environ.get("ONPOLICY_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "cython" if compiled_backend is not None else "python"

discounted_backward = backend.discounted_backward
nstep_targets = backend.nstep_targets

__all__ = [
    "BACKEND_NAME",
    "compiled_backend",
    "python_backend",
    "discounted_backward",
    "nstep_targets",
]
