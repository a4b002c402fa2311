"""Kernel backend selection.

The compiled extension is preferred; setting ``FOCKGA_PURE_PYTHON=1`` forces
the NumPy fallback.  ``BACKEND`` names the active choice.
"""
import os

from . import _pykernels as python_backend

compiled_backend = None
if not os.environ.get("FOCKGA_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "compiled" if compiled_backend is not None else "python"


def get_backend(name=None):
    """Return the kernel module for ``name`` ("compiled", "python" or None for the active one)."""
    if name is None:
        return _active
    if name == "python":
        return python_backend
    if name == "compiled":
        if compiled_backend is None:
            raise RuntimeError("compiled kernels are not available")
        return compiled_backend
    raise ValueError(f"unknown kernel backend {name!r}")


def taylor_expm_csr(*args, **kwargs):
    return _active.taylor_expm_csr(*args, **kwargs)


def posterior_variances(*args, **kwargs):
    return _active.posterior_variances(*args, **kwargs)
