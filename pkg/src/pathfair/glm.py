"""Generalised linear models for the nuisance functions.

Gaussian fits use least squares, binomial fits use iteratively reweighted
least squares. With an L1 penalty both switch to coordinate descent on the
(penalised) quadratic approximation, leaving the intercept unpenalised.
Penalties are applied on the scale of standardised columns.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import kernels
from .data import Dataset
from .exceptions import (
    DataError, NonFinite, NotConverged, PathFairError, RankDeficient, UnknownColumn,
)

CLIP_EPS = 1e-6


class FeatureSpec:
    """Ordered list of design terms.

    Terms are ``"1"`` (intercept), a column name, or an interaction of
    columns joined by ``":"``, e.g. ``["1", "x1", "x2", "x1:x2", "s"]``.
    """

    def __init__(self, terms):
        if isinstance(terms, FeatureSpec):
            terms = terms.terms
        terms = [str(t).strip() for t in terms]
        if not terms:
            raise DataError("empty feature specification")
        if len(set(terms)) != len(terms):
            raise DataError(f"duplicate terms in {terms}")
        self.terms = terms
        self._parts = [() if t == "1" else tuple(t.split(":")) for t in terms]

    def __repr__(self):
        return f"FeatureSpec({self.terms!r})"

    def __eq__(self, other):
        return isinstance(other, FeatureSpec) and self.terms == other.terms

    def __len__(self):
        return len(self.terms)

    @property
    def columns(self) -> set:
        """Raw columns referenced by the terms."""
        return {c for parts in self._parts for c in parts}

    @property
    def intercept_index(self):
        return self.terms.index("1") if "1" in self.terms else None

    def design(self, data: Dataset, overrides=None) -> np.ndarray:
        """Design matrix, shape (n, len(terms))."""
        X = np.empty((data.n, len(self.terms)))
        cache = {}
        for j, parts in enumerate(self._parts):
            if not parts:
                X[:, j] = 1.0
                continue
            for c in parts:
                if c not in cache:
                    if c not in data:
                        raise UnknownColumn(f"term references unknown column {c!r}")
                    cache[c] = data.column(c, overrides)
            col = cache[parts[0]]
            for c in parts[1:]:
                col = col * cache[c]
            X[:, j] = col
        return X

    def to_list(self) -> list:
        return list(self.terms)


@dataclass
class GlmModel:
    """Fitted (or fixed) generalised linear model.

    Attributes
    ----------
    family : {"gaussian", "binomial"}
    spec : FeatureSpec
    coef : ndarray
    target : str
        Column modelled.
    l1_penalty : float
    iterations : int
    converged : bool
    deviance : float
    clip_eps : float
        Binomial predictions are clipped to ``[clip_eps, 1 - clip_eps]``.
    """

    family: str
    spec: FeatureSpec
    coef: np.ndarray
    target: str = "y"
    l1_penalty: float = 0.0
    iterations: int = 0
    converged: bool = True
    deviance: float = float("nan")
    clip_eps: float = CLIP_EPS
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.spec = FeatureSpec(self.spec)
        self.coef = np.asarray(self.coef, dtype=float).reshape(-1)
        if self.coef.shape[0] != len(self.spec):
            raise DataError("coefficient length does not match the design")
        if self.family not in ("gaussian", "binomial"):
            raise DataError(f"unknown family {self.family!r}")

    @classmethod
    def fixed(cls, family, terms, coef, target="y", clip_eps=CLIP_EPS):
        """Model with known coefficients (used for oracle nuisances)."""
        return cls(family, FeatureSpec(terms), coef, target=target, clip_eps=clip_eps)

    def linear_predictor(self, data: Dataset, overrides=None) -> np.ndarray:
        return self.spec.design(data, overrides) @ self.coef

    def predict(self, data: Dataset, overrides=None) -> np.ndarray:
        eta = self.linear_predictor(data, overrides)
        if self.family == "gaussian":
            return eta
        return np.clip(expit(eta), self.clip_eps, 1.0 - self.clip_eps)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "target": self.target,
            "terms": self.spec.to_list(),
            "coef": [float(c) for c in self.coef],
            "l1_penalty": float(self.l1_penalty),
            "clip_eps": float(self.clip_eps),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "deviance": float(self.deviance),
        }

    @classmethod
    def from_dict(cls, d) -> "GlmModel":
        return cls(d["family"], FeatureSpec(d["terms"]), np.array(d["coef"], dtype=float),
                   target=d.get("target", "y"), l1_penalty=d.get("l1_penalty", 0.0),
                   iterations=d.get("iterations", 0), converged=d.get("converged", True),
                   deviance=d.get("deviance", float("nan")),
                   clip_eps=d.get("clip_eps", CLIP_EPS))


def predict(model: GlmModel, rows: Dataset, overrides=None) -> np.ndarray:
    """Predictions of ``model`` on ``rows``, with columns optionally overridden.

    ``overrides={"s": 0}`` evaluates every row as if ``s`` were 0.
    """
    if overrides:
        for k in overrides:
            if k not in rows:
                raise UnknownColumn(f"override of unknown column {k!r}")
    return model.predict(rows, overrides)


# -- fitting -----------------------------------------------------------------

def _inputs(data, target, spec):
    spec = FeatureSpec(spec)
    if target not in data:
        raise UnknownColumn(f"unknown target column {target!r}")
    if target in spec.columns:
        raise DataError(f"target {target!r} appears among its own regressors")
    X = spec.design(data)
    y = data[target]
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NonFinite("non-finite values in design or target")
    return spec, X, y


def _penalty_factors(X, spec):
    pf = X.std(axis=0)
    k = spec.intercept_index
    if k is not None:
        pf[k] = 0.0
    # constant non-intercept columns carry no information; leave unpenalised
    return pf


def _check_rank(X):
    k = X.shape[1]
    if X.shape[0] < k or np.linalg.matrix_rank(X) < k:
        raise RankDeficient(f"design has rank below its {k} columns")


def _binomial_deviance(y, eta):
    # -2 * log-likelihood written with log1p(exp) for stability
    return 2.0 * float(np.sum(np.logaddexp(0.0, eta) - y * eta))


def fit_gaussian(data: Dataset, target: str, spec, l1_penalty: float = 0.0,
                 tol: float = 1e-7, max_sweeps: int = 100000) -> GlmModel:
    """Least squares (optionally lasso) fit of ``target`` on ``spec``.

    Raises
    ------
    RankDeficient
        If the unpenalised design is not of full column rank.
    NonFinite
    """
    spec, X, y = _inputs(data, target, spec)
    if l1_penalty < 0:
        raise DataError("l1_penalty must be nonnegative")
    if l1_penalty == 0.0:
        _check_rank(X)
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        it = 1
    else:
        coef = np.zeros(X.shape[1])
        k = spec.intercept_index
        if k is not None:
            coef[k] = y.mean()
        pf = _penalty_factors(X, spec)
        it = kernels.wls_l1_cd(X, y, np.ones_like(y), coef, pf, l1_penalty, tol, max_sweeps)
    dev = float(np.sum((y - X @ coef) ** 2))
    return GlmModel("gaussian", spec, coef, target=target, l1_penalty=float(l1_penalty),
                    iterations=it, converged=True, deviance=dev)


def _irls(X, y, beta, max_iter, tol):
    dev = _binomial_deviance(y, X @ beta)
    history = [dev]
    for it in range(1, max_iter + 1):
        eta = X @ beta
        p = expit(eta)
        w = np.maximum(p * (1.0 - p), 1e-12)
        z = eta + (y - p) / w
        XtW = X.T * w
        try:
            new = np.linalg.solve(XtW @ X, XtW @ z)
        except np.linalg.LinAlgError:
            raise RankDeficient("singular information matrix") from None
        new_dev = _binomial_deviance(y, X @ new)
        halvings = 0
        # step halving keeps the deviance non-increasing
        while new_dev > dev * (1 + 1e-12) + 1e-12 and halvings < 40:
            new = 0.5 * (beta + new)
            new_dev = _binomial_deviance(y, X @ new)
            halvings += 1
        if new_dev > dev * (1 + 1e-12) + 1e-12:
            return beta, it, False, history
        step = np.max(np.abs(new - beta))
        beta, dev = new, new_dev
        history.append(dev)
        if step < tol:
            return beta, it, True, history
        if np.max(np.abs(beta)) > 1e4:
            return beta, it, False, history
    return beta, max_iter, False, history


def _penalised_objective(X, y, beta, lam, pf):
    n = X.shape[0]
    return _binomial_deviance(y, X @ beta) / (2.0 * n) + lam * float(np.sum(pf * np.abs(beta)))


def _prox_newton(X, y, beta, lam, pf, max_iter, tol, cd_tol):
    obj = _penalised_objective(X, y, beta, lam, pf)
    history = [obj]
    tol = max(tol, 10.0 * cd_tol)
    for it in range(1, max_iter + 1):
        eta = X @ beta
        p = expit(eta)
        w = np.maximum(p * (1.0 - p), 1e-5)
        z = eta + (y - p) / w
        cand = beta.copy()
        kernels.wls_l1_cd(X, z, w, cand, pf, lam, cd_tol, 100000)
        t = 1.0
        new = cand
        new_obj = _penalised_objective(X, y, new, lam, pf)
        while new_obj > obj + 1e-13 and t > 1e-8:
            t *= 0.5
            new = beta + t * (cand - beta)
            new_obj = _penalised_objective(X, y, new, lam, pf)
        if new_obj > obj + 1e-13:
            return beta, it, True, history
        step = np.max(np.abs(new - beta))
        beta, obj = new, new_obj
        history.append(obj)
        if step < tol:
            return beta, it, True, history
        if np.max(np.abs(beta)) > 1e4:
            return beta, it, False, history
    return beta, max_iter, False, history


def fit_binomial(data: Dataset, target: str, spec, l1_penalty: float = 0.0,
                 max_iter: int = 100, tol: float = 1e-8, *, solver: str = "auto",
                 cd_tol: float = 1e-7, start=None, raise_nonconverged: bool = True,
                 clip_eps: float = CLIP_EPS) -> GlmModel:
    """Logistic regression of binary ``target`` on ``spec``.

    Parameters
    ----------
    l1_penalty : float
        0 gives the maximum likelihood fit by IRLS; positive values give the
        lasso fit by proximal Newton with coordinate descent inner solves.
    max_iter, tol
        Outer iteration cap and tolerance on the largest coefficient change.
    solver : {"auto", "irls", "cd"}
        ``"cd"`` forces the coordinate descent path even without a penalty.
    start : array_like, optional
        Warm start.
    raise_nonconverged : bool
        If False, a non-converged fit is returned with ``converged=False``
        and a warning instead of raising.

    Raises
    ------
    NotConverged
        Carries the last iterate as ``exc.model``. Separation shows up here
        as a diverging coefficient norm.
    """
    spec, X, y = _inputs(data, target, spec)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError(f"target {target!r} is not binary")
    if l1_penalty < 0:
        raise DataError("l1_penalty must be nonnegative")
    k = spec.intercept_index
    if start is not None:
        beta = np.array(start, dtype=float)
    else:
        beta = np.zeros(X.shape[1])
        if k is not None:
            ybar = np.clip(y.mean(), 1e-6, 1 - 1e-6)
            beta[k] = np.log(ybar / (1 - ybar))
    use_cd = solver == "cd" or (solver == "auto" and l1_penalty > 0)
    if use_cd:
        pf = _penalty_factors(X, spec)
        beta, it, ok, hist = _prox_newton(X, y, beta, l1_penalty, pf, max_iter, tol, cd_tol)
        dev = _binomial_deviance(y, X @ beta)
    else:
        _check_rank(X)
        beta, it, ok, hist = _irls(X, y, beta, max_iter, tol)
        dev = hist[-1]
    model = GlmModel("binomial", spec, beta, target=target, l1_penalty=float(l1_penalty),
                     iterations=it, converged=ok, deviance=dev, clip_eps=clip_eps,
                     history=hist)
    if not ok:
        msg = f"binomial fit for {target!r} did not converge in {it} iterations"
        if raise_nonconverged:
            raise NotConverged(msg, model)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return model


def heldout_deviance(model: GlmModel, data: Dataset) -> float:
    """Mean deviance per row of ``model`` on ``data``."""
    y = data[model.target]
    if model.family == "gaussian":
        return float(np.mean((y - model.predict(data)) ** 2))
    p = model.predict(data)
    return float(-2.0 * np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def penalty_grid(data: Dataset, target: str, spec, n_lambda: int = 20,
                 ratio: float = 1e-2) -> np.ndarray:
    """Descending log-spaced grid from the smallest all-zero penalty."""
    spec, X, y = _inputs(data, target, spec)
    pf = _penalty_factors(X, spec)
    pen = pf > 0
    if not np.any(pen):
        return np.array([0.0])
    r = y - y.mean()
    lam_max = np.max(np.abs(X[:, pen].T @ r) / (X.shape[0] * pf[pen]))
    return lam_max * np.logspace(0.0, np.log10(ratio), n_lambda)


def fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    """Deterministic balanced fold labels."""
    rng = np.random.default_rng(seed)
    return rng.permutation(n) % folds


def cv_deviance(data: Dataset, target: str, spec, folds: int, grid, seed: int,
                family: str = "binomial") -> np.ndarray:
    """Mean held-out deviance per grid value; failed cells are NaN-excluded."""
    if folds < 2:
        raise DataError("folds must be at least 2")
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise DataError("empty penalty grid")
    ids = fold_ids(data.n, folds, seed)
    scores = np.full((folds, grid.size), np.nan)
    order = np.argsort(-grid, kind="stable")
    for f in range(folds):
        train, test = data.take(ids != f), data.take(ids == f)
        start = None
        for j in order:
            try:
                if family == "binomial":
                    m = fit_binomial(train, target, spec, l1_penalty=grid[j], start=start)
                    start = m.coef
                else:
                    m = fit_gaussian(train, target, spec, l1_penalty=grid[j])
                scores[f, j] = heldout_deviance(m, test)
            except PathFairError as exc:
                warnings.warn(f"fold {f}, penalty {grid[j]:.3g} excluded: {exc}",
                              RuntimeWarning, stacklevel=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(scores, axis=0)


def select_penalty_cv(data: Dataset, target: str, spec, folds: int = 10, grid=None,
                      seed: int = 0, family: str = "binomial") -> float:
    """Penalty from ``grid`` minimising mean held-out deviance.

    Ties go to the earliest grid entry. The default grid is
    :func:`penalty_grid`.
    """
    if grid is None:
        grid = penalty_grid(data, target, spec)
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 1:
        return float(grid[0])
    cv = cv_deviance(data, target, spec, folds, grid, seed, family)
    if np.all(np.isnan(cv)):
        raise NotConverged("every cross-validation cell failed")
    return float(grid[int(np.nanargmin(cv))])


# -- nuisance bundle ---------------------------------------------------------

@dataclass
class NuisanceSet:
    """Outcome regression, propensity and binary mediator densities.

    ``extra`` holds density models for additional mediators (generic
    graphs), keyed by the column they model.
    """

    psi: GlmModel
    pi: GlmModel
    f_m: GlmModel | None = None
    f_l: GlmModel | None = None
    extra: dict = field(default_factory=dict)

    def density(self, node: str) -> GlmModel:
        for mdl in (self.f_m, self.f_l, *self.extra.values()):
            if mdl is not None and mdl.target == node:
                return mdl
        raise UnknownColumn(f"no density model for {node!r}")

    def validate(self, x_names, s="s", m="m", l="l", y="y"):  # noqa: E741
        """Check each model conditions only on its legal parents."""
        x = set(x_names)
        legal = {
            "psi": x | {s, m, l},
            "pi": x,
            "f_m": x | {s},
            "f_l": x | {s, m},
        }
        for name, allowed in legal.items():
            mdl = getattr(self, name)
            if mdl is None:
                continue
            bad = mdl.spec.columns - allowed
            if bad:
                raise DataError(f"{name} conditions on illegal columns {sorted(bad)}")

    def with_clip(self, clip_eps: float) -> "NuisanceSet":
        def c(m):
            if m is None:
                return None
            return GlmModel(m.family, m.spec, m.coef, m.target, m.l1_penalty,
                            m.iterations, m.converged, m.deviance, clip_eps)
        return NuisanceSet(c(self.psi), c(self.pi), c(self.f_m), c(self.f_l),
                           {k: c(v) for k, v in self.extra.items()})

    def to_dict(self) -> dict:
        d = {k: getattr(self, k).to_dict() for k in ("psi", "pi", "f_m", "f_l")
             if getattr(self, k) is not None}
        if self.extra:
            d["extra"] = {k: v.to_dict() for k, v in self.extra.items()}
        return d

    @classmethod
    def from_dict(cls, d) -> "NuisanceSet":
        g = lambda k: GlmModel.from_dict(d[k]) if k in d else None  # noqa: E731
        return cls(g("psi"), g("pi"), g("f_m"), g("f_l"),
                   {k: GlmModel.from_dict(v) for k, v in d.get("extra", {}).items()})


def fit_nuisances(data: Dataset, specs: dict, *, outcome_family: str = "gaussian",
                  l1: str | float | dict = 0.0, cv_folds: int = 10, seed: int = 0,
                  names=("s", "m", "l", "y"), raise_nonconverged: bool = True,
                  clip_eps: float = CLIP_EPS) -> NuisanceSet:
    """Fit the four nuisance models.

    Parameters
    ----------
    specs : dict
        Keys ``psi``, ``pi``, ``f_m``, ``f_l`` mapping to term lists; the
        mediator keys may be omitted for graphs without them.
    l1 : float, "cv" or dict
        Penalty for every model, ``"cv"`` to select each by cross-validated
        deviance, or a per-model dict of either.
    """
    s, m, l, y = names  # noqa: E741
    targets = {"psi": y, "pi": s, "f_m": m, "f_l": l}
    fitted = {}
    for key in ("psi", "pi", "f_m", "f_l"):
        if key not in specs or specs[key] is None:
            continue
        spec = FeatureSpec(specs[key])
        pen = l1.get(key, 0.0) if isinstance(l1, dict) else l1
        fam = outcome_family if key == "psi" else "binomial"
        tgt = targets[key]
        if pen == "cv":
            pen = select_penalty_cv(data, tgt, spec, cv_folds, None, seed, fam)
        if fam == "gaussian":
            fitted[key] = fit_gaussian(data, tgt, spec, l1_penalty=float(pen))
        else:
            fitted[key] = fit_binomial(data, tgt, spec, l1_penalty=float(pen),
                                       raise_nonconverged=raise_nonconverged,
                                       clip_eps=clip_eps)
    ns = NuisanceSet(fitted["psi"], fitted["pi"], fitted.get("f_m"), fitted.get("f_l"))
    ns.validate(data.x_names, s, m, l, y)
    return ns
