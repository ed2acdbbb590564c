"""Kernel dispatch.

The compiled extension is used when importable; set the environment variable
``PATHFAIR_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("PATHFAIR_PURE_PYTHON"):
        raise ImportError("pure python requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"


def backend(impl=None):
    """Resolve ``impl`` ("python", "cython", a module or None) to a module."""
    if impl is None:
        return _impl
    if impl == "python":
        return _pykernels
    if impl == "cython":
        from . import _ckernels
        return _ckernels
    return impl


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def wls_l1_cd(X, z, w, beta, pf, lam, tol=1e-7, max_sweeps=10000, impl=None):
    """Penalised weighted least squares; updates ``beta`` in place.

    Parameters
    ----------
    X : ndarray, shape (n, p)
    z, w : ndarray, shape (n,)
        Working response and nonnegative weights.
    beta : ndarray, shape (p,)
        Warm start, overwritten with the solution.
    pf : ndarray, shape (p,)
        Per-coefficient penalty factors (0 leaves a coefficient unpenalised).
    lam : float
    tol : float
        Stop when no coordinate moves by more than ``tol`` in a full sweep.
    max_sweeps : int
    impl : {"python", "cython"} or module, optional
        Force a backend (used by tests and benchmarks).

    Returns
    -------
    int
        Number of sweeps.
    """
    impl = backend(impl)
    Xf = np.asfortranarray(X, dtype=np.float64)
    b = _f64(beta)
    sweeps = impl.wls_l1_cd(Xf, _f64(z), _f64(w), b, _f64(pf), float(lam),
                            float(tol), int(max_sweeps))
    beta[...] = b
    return int(sweeps)


def xent_path(psi, d, lam, impl=None):
    """Elementwise path points; returns ``(values, n_negative_discriminant)``."""
    impl = backend(impl)
    return impl.xent_path(_f64(psi).ravel(), _f64(d).ravel(), float(lam))


def xent_scan(psi, d, w, lambdas, impl=None):
    impl = backend(impl)
    return impl.xent_scan(_f64(psi).ravel(), _f64(d).ravel(), _f64(w).ravel(),
                          _f64(lambdas).ravel())


def logodds_scan(psi, d, w, lambdas, eps, impl=None):
    # numpy's vectorised log beats the scalar libm loop, so it is the default
    impl = _pykernels if impl is None else backend(impl)
    return impl.logodds_scan(_f64(psi).ravel(), _f64(d).ravel(),
                             _f64(w).ravel(), _f64(lambdas).ravel(), float(eps))
