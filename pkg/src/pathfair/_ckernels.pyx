# cython: language_level=3
"""Compiled kernels for the hot loops.

Mirrors ``pathfair._pykernels`` function by function; both modules must
return identical results up to floating point reassociation.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, log

cnp.import_array()


cdef inline double _soft(double z, double g) noexcept nogil:
    if z > g:
        return z - g
    if z < -g:
        return z + g
    return 0.0


cdef inline double _path_point(double psi, double d, double lam,
                               int *bad) noexcept nogil:
    cdef double a = lam * d
    cdef double b, disc, sq, den, r
    if fabs(a) < 1e-8:
        r = psi - a * psi * (1.0 - psi)
    else:
        b = 1.0 + a
        disc = b * b - 4.0 * a * psi
        if disc < 0.0:
            if disc < -1e-12 * (1.0 + a * a):
                bad[0] += 1
            disc = 0.0
        sq = sqrt(disc)
        if b >= 0.0:
            den = b + sq
            r = 2.0 * psi / den if den > 0.0 else 0.0
        else:
            r = (b - sq) / (2.0 * a)
    if r < 0.0:
        r = 0.0
    elif r > 1.0:
        r = 1.0
    return r


def wls_l1_cd(const double[::1, :] X, const double[::1] z, const double[::1] w,
              double[::1] beta, const double[::1] pf, double lam,
              double tol, int max_sweeps):
    """Weighted least squares with an L1 penalty by coordinate descent.

    Minimises ``sum(w * (z - X @ beta)**2) / (2 n) + lam * sum(pf * |beta|)``
    in place on ``beta``. Returns the number of sweeps performed.
    """
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1]
    cdef Py_ssize_t i, j
    cdef double[::1] r = np.empty(n)
    cdef double[::1] xwx = np.empty(p)
    cdef cnp.uint8_t[::1] active = np.zeros(p, dtype=np.uint8)
    cdef double g, old, new, delta, dmax, acc, inv_n = 1.0 / n
    cdef int sweeps = 0
    cdef bint full = True, changed

    with nogil:
        for i in range(n):
            acc = z[i]
            for j in range(p):
                acc = acc - X[i, j] * beta[j]
            r[i] = acc
        for j in range(p):
            acc = 0.0
            for i in range(n):
                acc = acc + w[i] * X[i, j] * X[i, j]
            xwx[j] = acc * inv_n

        while sweeps < max_sweeps:
            sweeps += 1
            dmax = 0.0
            changed = False
            for j in range(p):
                if not full and not active[j]:
                    continue
                if xwx[j] <= 0.0:
                    continue
                old = beta[j]
                acc = 0.0
                for i in range(n):
                    acc = acc + w[i] * X[i, j] * r[i]
                g = acc * inv_n + xwx[j] * old
                new = _soft(g, lam * pf[j]) / xwx[j]
                delta = new - old
                if delta != 0.0:
                    for i in range(n):
                        r[i] = r[i] - X[i, j] * delta
                    beta[j] = new
                    if fabs(delta) > dmax:
                        dmax = fabs(delta)
                if full:
                    if (new != 0.0) != (active[j] != 0):
                        changed = True
                    active[j] = 1 if new != 0.0 else 0
            if dmax < tol:
                if full and not changed:
                    break
                full = True
            else:
                full = False
    return sweeps


def xent_path(const double[::1] psi, const double[::1] d, double lam):
    """Unit-interval root of the cross-entropy path equation, elementwise."""
    cdef Py_ssize_t k, n = psi.shape[0]
    cdef int bad = 0
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for k in range(n):
            o[k] = _path_point(psi[k], d[k], lam, &bad)
    return out, bad


def xent_scan(const double[::1] psi, const double[::1] d, const double[::1] w,
              const double[::1] lambdas):
    """Return ``sum(w * path(psi, d, lam))`` for every ``lam``."""
    cdef Py_ssize_t k, t, n = psi.shape[0], m = lambdas.shape[0]
    cdef int bad = 0
    cdef double acc
    out = np.empty(m)
    cdef double[::1] o = out
    with nogil:
        for t in range(m):
            acc = 0.0
            for k in range(n):
                acc = acc + w[k] * _path_point(psi[k], d[k], lambdas[t], &bad)
            o[t] = acc
    return out, bad


def logodds_scan(const double[::1] psi, const double[::1] d, const double[::1] w,
                 const double[::1] lambdas, double eps):
    """Return ``sum(w * logit(clip(psi - lam * d)))`` for every ``lam``."""
    cdef Py_ssize_t k, t, n = psi.shape[0], m = lambdas.shape[0]
    cdef double acc, v, lo = eps, hi = 1.0 - eps
    out = np.empty(m)
    cdef double[::1] o = out
    with nogil:
        for t in range(m):
            acc = 0.0
            for k in range(n):
                v = psi[k] - lambdas[t] * d[k]
                if v < lo:
                    v = lo
                elif v > hi:
                    v = hi
                acc = acc + w[k] * log(v / (1.0 - v))
            o[t] = acc
    return out
