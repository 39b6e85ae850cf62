"""Backend selection for the hot numerical kernels.

The compiled extension ``netreg._ckernels`` is used when it imports; otherwise
the pure-Python ``netreg._pykernels`` is used. Setting the environment variable
``NETREG_PURE_PYTHON=1`` forces the fallback.
"""
import os

from netreg import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("NETREG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from netreg import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

jacobi_svd = _impl.jacobi_svd
circ_conv = _impl.circ_conv
circ_corr = _impl.circ_corr
prox_power = _impl.prox_power


def backends():
    """Return ``{name: module}`` for every importable backend."""
    found = {"python": _pykernels}
    try:
        from netreg import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
