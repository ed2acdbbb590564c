"""Compiled kernels against the numpy reference implementations."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathfair import _pykernels, kernels

needs_ext = pytest.mark.skipif(kernels.BACKEND != "cython",
                               reason="compiled extension not built")


def _problem(n=200, k=6, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, k - 1))])
    z = X @ rng.standard_normal(k) + rng.standard_normal(n)
    w = rng.uniform(0.2, 1.0, n)
    pf = np.r_[0.0, np.ones(k - 1)]
    return X, z, w, pf


def _objective(X, z, w, beta, pf, lam):
    r = z - X @ beta
    return np.sum(w * r * r) / (2 * len(z)) + lam * np.sum(pf * np.abs(beta))


@needs_ext
def test_backend_is_compiled():
    assert kernels.BACKEND == "cython"


@pytest.mark.parametrize("impl", ["python", pytest.param("cython", marks=needs_ext)])
def test_cd_satisfies_kkt(impl):
    X, z, w, pf = _problem()
    lam = 0.1
    beta = np.zeros(X.shape[1])
    kernels.wls_l1_cd(X, z, w, beta, pf, lam, tol=1e-12, impl=impl)
    g = X.T @ (w * (z - X @ beta)) / len(z)
    active = beta != 0
    np.testing.assert_allclose(g[active], lam * pf[active] * np.sign(beta[active]), atol=1e-8)
    assert np.all(np.abs(g[~active]) <= lam * pf[~active] + 1e-8)


@pytest.mark.parametrize("impl", ["python", pytest.param("cython", marks=needs_ext)])
def test_cd_sweeps_decrease_objective(impl):
    X, z, w, pf = _problem(seed=2)
    beta = np.zeros(X.shape[1])
    objs = [_objective(X, z, w, beta, pf, 0.05)]
    for _ in range(6):
        kernels.wls_l1_cd(X, z, w, beta, pf, 0.05, tol=0.0, max_sweeps=1, impl=impl)
        objs.append(_objective(X, z, w, beta, pf, 0.05))
    assert np.all(np.diff(objs) <= 1e-14)


@needs_ext
def test_cd_parity():
    X, z, w, pf = _problem(seed=3)
    a = np.zeros(X.shape[1])
    b = np.zeros(X.shape[1])
    na = kernels.wls_l1_cd(X, z, w, a, pf, 0.07, tol=1e-10, impl="python")
    nb = kernels.wls_l1_cd(X, z, w, b, pf, 0.07, tol=1e-10, impl="cython")
    np.testing.assert_allclose(a, b, atol=1e-9)
    assert abs(na - nb) <= 1


unit = st.floats(0.0, 1.0, allow_nan=False)


@needs_ext
@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(unit, st.floats(-50, 50), st.floats(-5, 5)), min_size=1, max_size=30))
def test_xent_path_parity(rows):
    psi, d, lam = map(np.array, zip(*rows))
    for lv in lam:
        a, ba = kernels.xent_path(psi, d, lv, impl="python")
        b, bb = kernels.xent_path(psi, d, lv, impl="cython")
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
        assert ba == bb == 0


@needs_ext
def test_scan_parity():
    rng = np.random.default_rng(4)
    psi = rng.uniform(0, 1, 500)
    d = rng.normal(0, 3, 500)
    w = rng.normal(0, 1, 500)
    lams = np.linspace(-1, 1, 41)
    a, _ = kernels.xent_scan(psi, d, w, lams, impl="python")
    b, _ = kernels.xent_scan(psi, d, w, lams, impl="cython")
    np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-11)
    a = kernels.logodds_scan(psi, d, w, lams, 1e-6, impl="python")
    b = kernels.logodds_scan(psi, d, w, lams, 1e-6, impl="cython")
    np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-10)


def test_reference_scan_matches_path():
    rng = np.random.default_rng(5)
    psi = rng.uniform(0, 1, 50)
    d = rng.normal(0, 2, 50)
    w = rng.normal(0, 1, 50)
    sums, _ = _pykernels.xent_scan(psi, d, w, np.array([0.3]))
    pts, _ = _pykernels.xent_path(psi, d, 0.3)
    assert sums[0] == pytest.approx(w @ pts, rel=1e-12)
