"""Pure numpy implementations of the compiled kernels.

Used when the Cython extension is not built, and as the reference the
compiled kernels are tested against.
"""
import numpy as np


def _path_points(psi, d, lam):
    """Vectorised unit-interval root; returns (values, n_bad)."""
    psi = np.asarray(psi, dtype=float)
    a = lam * np.asarray(d, dtype=float)
    small = np.abs(a) < 1e-8
    b = 1.0 + a
    disc = b * b - 4.0 * a * psi
    bad = int(np.count_nonzero(disc < -1e-12 * (1.0 + a * a)))
    sq = np.sqrt(np.maximum(disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        den = b + sq
        pos = np.where(den > 0.0, 2.0 * psi / np.where(den > 0.0, den, 1.0), 0.0)
        neg = (b - sq) / np.where(small, 1.0, 2.0 * a)
    r = np.where(b >= 0.0, pos, neg)
    r = np.where(small, psi - a * psi * (1.0 - psi), r)
    return np.clip(r, 0.0, 1.0), bad


def wls_l1_cd(X, z, w, beta, pf, lam, tol, max_sweeps):
    """Weighted least squares with an L1 penalty by coordinate descent.

    Minimises ``sum(w * (z - X @ beta)**2) / (2 n) + lam * sum(pf * |beta|)``
    in place on ``beta``. Returns the number of sweeps performed.
    """
    n, p = X.shape
    r = z - X @ beta
    wx = X * w[:, None]
    xwx = np.einsum("ij,ij->j", wx, X) / n
    active = np.zeros(p, dtype=bool)
    full = True
    sweeps = 0
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
            g = wx[:, j] @ r / n + xwx[j] * old
            thr = lam * pf[j]
            new = (g - thr if g > thr else g + thr if g < -thr else 0.0) / xwx[j]
            delta = new - old
            if delta != 0.0:
                r -= X[:, j] * delta
                beta[j] = new
                dmax = max(dmax, abs(delta))
            if full:
                if (new != 0.0) != active[j]:
                    changed = True
                active[j] = new != 0.0
        if dmax < tol:
            if full and not changed:
                break
            full = True
        else:
            full = False
    return sweeps


def xent_path(psi, d, lam):
    """Unit-interval root of the cross-entropy path equation, elementwise."""
    return _path_points(psi, d, lam)


def xent_scan(psi, d, w, lambdas):
    """Return ``sum(w * path(psi, d, lam))`` for every ``lam``."""
    out = np.empty(len(lambdas))
    bad = 0
    for t, lam in enumerate(lambdas):
        v, b = _path_points(psi, d, lam)
        out[t] = w @ v
        bad += b
    return out, bad


def logodds_scan(psi, d, w, lambdas, eps):
    """Return ``sum(w * logit(clip(psi - lam * d)))`` for every ``lam``."""
    out = np.empty(len(lambdas))
    for t, lam in enumerate(lambdas):
        v = np.clip(psi - lam * d, eps, 1.0 - eps)
        out[t] = w @ np.log(v / (1.0 - v))
    return out
