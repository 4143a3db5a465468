"""Kernel backend selection.

Prefers the compiled extension (``cocolq._kernels``); falls back to the
pure-Python implementation when the extension is missing or when the
environment variable ``COCOLQ_PURE_PYTHON`` is set to a non-empty value
other than ``0``.
"""

from __future__ import annotations

import os

if os.environ.get("COCOLQ_PURE_PYTHON", "0") not in ("", "0"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:  # pragma: no cover - depends on build environment
        from . import _kernels_py as _impl

jacobi_eig = _impl.jacobi_eig
jacobi_svd = _impl.jacobi_svd
chol_factor = _impl.chol_factor
chol_solve_factor = _impl.chol_solve_factor


def backend_name() -> str:
    """Which kernel implementation is active: ``"cython"`` or ``"python"``."""
    return _impl.BACKEND
