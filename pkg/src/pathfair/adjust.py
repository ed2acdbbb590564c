"""Fairness-constrained predictors built from an unconstrained regression.

Three modes are provided.

``mse_mean_diff``
    squared-error risk with a mean-difference constraint; closed form
    ``psi - theta * D / sigma2``.
``xent_mean_diff``
    cross-entropy risk with a mean-difference constraint; each prediction
    moves along the root of a quadratic indexed by a multiplier ``lambda``
    chosen by grid search.
``xent_log_odds``
    cross-entropy risk with the constraint on the log-odds scale; linear
    form ``psi - lambda * D`` with ``lambda`` searched inside the interval
    keeping every prediction in [0, 1].

Inequality constraints ``|Theta| <= bound`` are met by shrinking the target
to the nearest boundary point.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import Dataset
from .exceptions import (
    DegenerateVariance, EmptyFeasibleInterval, NegativeDiscriminant, UnsupportedScenario,
)
from .glm import CLIP_EPS, NuisanceSet
from .pse import (
    ConstraintEstimate, GradientField, Scenario, _density, _generic_nodes, config_overrides,
    cube_gradient, estimate, evaluate_cube, gradient_field, gradient_values, gradient_variance,
    linear_weights,
)

log = logging.getLogger(__name__)

MODES = ("mse_mean_diff", "xent_mean_diff", "xent_log_odds")
DELTA = 1e-8


class NoSignChange(RuntimeWarning):
    """The multiplier search ended above its tolerance."""


def shrink(theta: float, bound: float) -> float:
    """Distance of ``theta`` outside ``[-bound, bound]``, signed."""
    if bound < 0:
        raise ValueError("bound must be nonnegative")
    if abs(theta) <= bound:
        return 0.0
    return theta - np.sign(theta) * bound


@dataclass
class LambdaSearchConfig:
    """Grid search settings for the multiplier.

    Attributes
    ----------
    grid_size : int
        Points per pass (at least 3).
    bracket : tuple, optional
        Initial ``(lo, hi)``; derived from the data when omitted.
    refine : int
        Refinement passes, each re-gridding the cells next to the best point.
    tol : float
        Target on the achieved absolute constraint; exceeding it warns.
    max_expand : int
        Bracket doublings allowed while looking for a sign change.
    """

    grid_size: int = 2001
    bracket: tuple | None = None
    refine: int = 2
    tol: float = 1e-6
    max_expand: int = 40

    def __post_init__(self):
        if self.grid_size < 3:
            raise ValueError("grid_size must be at least 3")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class FairPredictor:
    """Constrained predictor: base regression plus its correction.

    Predictions are ``psi - lam * D`` in the linear modes (for the squared
    error mode ``lam = theta_eff / sigma2``) and the path root in
    ``xent_mean_diff``.
    """

    mode: str
    nuis: NuisanceSet
    scenario: Scenario
    theta: float
    sigma2: float
    lam: float
    bound: float = 0.0
    theta_method: str = "plugin"
    clip_eps: float = CLIP_EPS
    achieved: float = float("nan")
    eps_interval: tuple | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    def base(self, data: Dataset, overrides=None) -> np.ndarray:
        return self.nuis.psi.predict(data, overrides)

    def gradient(self, data: Dataset, overrides=None) -> np.ndarray:
        return gradient_values(data, self.nuis, self.scenario, overrides)

    def predict(self, data: Dataset, overrides=None, return_clamps=False):
        psi = self.base(data, overrides)
        if self.lam == 0.0:
            out, clamps = psi.copy(), 0
        else:
            D = self.gradient(data, overrides)
            if self.mode == "xent_mean_diff":
                out, bad = kernels.xent_path(psi, D, self.lam)
                if bad:
                    raise NegativeDiscriminant(f"{bad} rows with negative discriminant")
                clamps = int(np.count_nonzero((out == 0.0) | (out == 1.0)))
            else:
                out = psi - self.lam * D
                clamps = 0
                if self.mode == "xent_log_odds":
                    clamps = int(np.count_nonzero((out < 0.0) | (out > 1.0)))
                    out = np.clip(out, 0.0, 1.0)
        return (out, clamps) if return_clamps else out

    __call__ = predict

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "theta_method": self.theta_method,
            "theta": float(self.theta),
            "sigma2": float(self.sigma2),
            "lambda": float(self.lam),
            "bound": float(self.bound),
            "clip_eps": float(self.clip_eps),
            "achieved": float(self.achieved),
            "eps_interval": None if self.eps_interval is None else list(map(float, self.eps_interval)),
            "scenario": self.scenario.to_dict(),
            "nuisances": self.nuis.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "FairPredictor":
        eps = d.get("eps_interval")
        return cls(d["mode"], NuisanceSet.from_dict(d["nuisances"]),
                   Scenario.from_dict(d["scenario"]), d["theta"], d["sigma2"],
                   d["lambda"], d.get("bound", 0.0), d.get("theta_method", "plugin"),
                   d.get("clip_eps", CLIP_EPS), d.get("achieved", float("nan")),
                   None if eps is None else tuple(eps))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "FairPredictor":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def predict_fair(fp: FairPredictor, rows: Dataset) -> np.ndarray:
    """Row-wise constrained predictions."""
    return fp.predict(rows)


# -- squared error -----------------------------------------------------------

def mse_gap(est: ConstraintEstimate, field: GradientField, delta: float = DELTA) -> float:
    """Predicted mean squared change ``theta**2 / sigma2``."""
    if not field.sigma2 > delta:
        raise DegenerateVariance(f"gradient variance {field.sigma2:.3g} <= {delta}")
    return float(est.value ** 2 / field.sigma2)


def adjust_mse(nuis: NuisanceSet, scenario: Scenario, est: ConstraintEstimate,
               field: GradientField, bound: float = 0.0,
               delta: float = DELTA) -> FairPredictor:
    """Closed-form squared-error adjustment.

    Raises
    ------
    DegenerateVariance
        If ``field.sigma2 <= delta``.
    """
    if not field.sigma2 > delta:
        raise DegenerateVariance(f"gradient variance {field.sigma2:.3g} <= {delta}")
    lam = shrink(est.value, bound) / field.sigma2
    return FairPredictor("mse_mean_diff", nuis, scenario, est.value, field.sigma2, lam,
                         bound, est.method, nuis.psi.clip_eps, achieved=float("nan"))


# -- cross-entropy ------------------------------------------------------------

def xent_path_point(psi_value, d_value, lam, s=None):
    """Root in [0, 1] of ``lam d q**2 - (1 + lam d) q + psi = 0``.

    Equivalently ``(q - psi) / (q (1 - q)) + lam d = 0``. The root is taken
    in the cancellation-free form matching the sign of ``1 + lam d``; for
    ``|lam d| < 1e-8`` the first-order expansion is returned. ``s`` is
    accepted for call-site symmetry with the gradient; the unit-interval
    root is unique whatever the sign of ``d``.

    Raises
    ------
    NegativeDiscriminant
        Only if ``psi`` lies outside [0, 1] (the discriminant is otherwise
        bounded below by ``(1 - |lam d|)**2``).
    """
    if s is not None and not np.all(np.isin(s, (0, 1))):
        raise ValueError("s must be binary")
    psi = np.asarray(psi_value, dtype=float)
    d = np.broadcast_to(np.asarray(d_value, dtype=float), psi.shape)
    if np.any((psi < 0) | (psi > 1)):
        raise NegativeDiscriminant("psi outside [0, 1]")
    out, bad = kernels.xent_path(psi.ravel(), d.ravel(), float(lam))
    if bad:
        raise NegativeDiscriminant(f"{bad} negative discriminants")
    out = out.reshape(psi.shape)
    return float(out) if out.ndim == 0 else out


@dataclass
class _Table:
    """Linear constraint representation over evaluation points."""

    psi: np.ndarray  # (K, n)
    D: np.ndarray    # (K, n)
    W: np.ndarray    # (K, n); Theta(g) = sum(W * g) / n
    s: np.ndarray    # (K,) sensitive value of each point
    n: int
    points: list     # (K,) column overrides defining each point

    def theta(self, g) -> float:
        return float(np.sum(self.W * g) / self.n)


def constraint_table(data: Dataset, nuis: NuisanceSet, scenario: Scenario,
                     method: str) -> _Table:
    """Evaluation points, gradient values and weights of ``method``."""
    if scenario.tag in ("rho1", "rho2"):
        c = evaluate_cube(data, nuis, scenario)
        W = linear_weights(c, method, scenario.tag)
        D = cube_gradient(c, scenario.tag)
        pts = [ov for _, ov in config_overrides(scenario)]
        s = np.array([p[scenario.s] for p in pts])
        return _Table(c.psi.reshape(8, -1), D.reshape(8, -1), W.reshape(8, -1), s, data.n,
                      pts)
    if method != "plugin":
        raise UnsupportedScenario(f"{method} is available for rho1/rho2 only")
    part = scenario.partition
    S = part.sensitive
    nodes = _generic_nodes(part)
    l_nodes = [v for v in part.l_rho if v != part.outcome]
    P, Ds, Ws, ss, pts = [], [], [], [], []
    for cfg in np.ndindex(*(2,) * len(nodes)):
        ov = dict(zip(nodes, cfg))
        dens = {}
        for s in (0, 1):
            o = dict(ov, **{S: s})
            pm = np.ones(data.n)
            for v in part.m_rho:
                pm = pm * _density(nuis, data, v, o)
            pl = np.ones(data.n)
            for v in l_nodes:
                pl = pl * _density(nuis, data, v, o)
            dens[s] = (pm, pl)
        for s in (0, 1):
            o = dict(ov, **{S: s})
            if part.s_y == 1:
                w = (1 if s else -1) * dens[s][1] * dens[0][0]
            else:
                w = (dens[1][0] - dens[0][0]) * dens[0][1] if s == 0 else np.zeros(data.n)
            P.append(nuis.psi.predict(data, o))
            Ds.append(gradient_values(data, nuis, scenario, o))
            Ws.append(w)
            ss.append(s)
            pts.append(o)
    return _Table(np.array(P), np.array(Ds), np.array(Ws), np.array(ss), data.n, pts)


def _grid_search(f, lo, hi, target, cfg: LambdaSearchConfig, clip=None):
    """Minimise ``|f(lam) - target|`` by a grid and refinement passes.

    Ties resolve to the smallest ``lam``. Returns ``(lam, |f - target|,
    first-pass grid, first-pass values)``.
    """
    grid = np.linspace(lo, hi, cfg.grid_size)
    vals = f(grid)
    first = (grid, vals)
    k = int(np.argmin(np.abs(vals - target)))
    best, best_err = grid[k], abs(vals[k] - target)
    for _ in range(cfg.refine):
        step = grid[1] - grid[0]
        a, b = best - step, best + step
        if clip is not None:
            a, b = max(a, clip[0]), min(b, clip[1])
        grid = np.linspace(a, b, cfg.grid_size)
        vals = f(grid)
        k = int(np.argmin(np.abs(vals - target)))
        if abs(vals[k] - target) < best_err or (
                abs(vals[k] - target) == best_err and grid[k] < best):
            best, best_err = grid[k], abs(vals[k] - target)
    return float(best), float(best_err), first


def _monotone_violations(vals, tol=1e-12):
    return int(np.count_nonzero(np.diff(vals) > tol * (1 + np.max(np.abs(vals)))))


def solve_lambda_xent(data: Dataset, nuis: NuisanceSet, scenario: Scenario,
                      theta_method: str = "plugin", cfg: LambdaSearchConfig | None = None,
                      bound: float = 0.0) -> FairPredictor:
    """Cross-entropy adjustment on the mean-difference scale.

    The constraint of each candidate ``psi_lambda`` is estimated with
    ``theta_method``; inside the weighted estimators the observed outcome is
    replaced by ``psi_lambda`` at the observed configuration.
    """
    cfg = cfg or LambdaSearchConfig()
    if nuis.psi.family != "binomial":
        raise UnsupportedScenario("cross-entropy adjustment needs a binary outcome model")
    tab = constraint_table(data, nuis, scenario, theta_method)
    psi, D, W = tab.psi.ravel(), tab.D.ravel(), tab.W.ravel()

    def f(lams):
        v, bad = kernels.xent_scan(psi, D, W, np.atleast_1d(lams))
        if bad:
            raise NegativeDiscriminant(f"{bad} negative discriminants in scan")
        return v / tab.n

    theta = float(f(0.0)[0])
    sigma2 = gradient_variance(data, nuis, scenario)
    if not sigma2 > DELTA:
        raise DegenerateVariance(f"gradient variance {sigma2:.3g} <= {DELTA}")
    target = float(np.sign(theta) * bound) if abs(theta) > bound else theta
    if abs(theta) <= bound:
        fp = FairPredictor("xent_mean_diff", nuis, scenario, theta, sigma2, 0.0, bound,
                           theta_method, nuis.psi.clip_eps, achieved=0.0)
        return fp
    if cfg.bracket is not None:
        lo, hi = sorted(cfg.bracket)
    else:
        h = 4.0 * abs(theta) / sigma2 or 1.0 / sigma2
        lo, hi = -h, h
        for _ in range(cfg.max_expand):
            flo, fhi = f(np.array([lo, hi])) - target
            if flo * fhi <= 0:
                break
            lo, hi = 2 * lo, 2 * hi
    lam, err, (g, v) = _grid_search(f, lo, hi, target, cfg)
    viol = _monotone_violations(v)
    if viol:
        log.debug("constraint path not monotone at %d grid cells", viol)
    if err > cfg.tol:
        warnings.warn(f"lambda search ended with |Theta - target| = {err:.3g} > {cfg.tol:g}",
                      NoSignChange, stacklevel=2)
    return FairPredictor("xent_mean_diff", nuis, scenario, theta, sigma2, lam, bound,
                         theta_method, nuis.psi.clip_eps, achieved=err,
                         diagnostics={"monotone_violations": viol, "bracket": (lo, hi)})


def log_odds_bounds(psi, D, s):
    """Interval of multipliers keeping ``psi - lam * D`` inside [0, 1].

    ``psi``, ``D`` have shape (K, n) and ``s`` (K,) gives the sensitive
    value of each evaluation point.

    Returns
    -------
    lo, hi : float
    """
    with np.errstate(divide="ignore"):
        lower = np.where(D > 0, -(1.0 - psi) / D, np.where(D < 0, psi / D, -np.inf))
        upper = np.where(D > 0, psi / D, np.where(D < 0, (psi - 1.0) / D, np.inf))
    lo, hi = float(np.max(lower)), float(np.min(upper))
    if lo > hi:
        rows = sorted(set(np.nonzero(lower > hi)[1].tolist()) | set(np.nonzero(upper < lo)[1].tolist()))
        raise EmptyFeasibleInterval(f"empty multiplier interval [{lo:.6g}, {hi:.6g}]", rows)
    return lo, hi


def adjust_log_odds(data: Dataset, nuis: NuisanceSet, scenario: Scenario,
                    cfg: LambdaSearchConfig | None = None, bound: float = 0.0,
                    theta_method: str = "plugin") -> FairPredictor:
    """Cross-entropy adjustment with the constraint on the log-odds scale.

    The multiplier is searched inside the interval that keeps every
    evaluated prediction in [0, 1]; the constraint is the plug-in (or
    ``ipw-alt``) estimator applied to ``logit(psi - lam * D)``.
    """
    cfg = cfg or LambdaSearchConfig()
    if nuis.psi.family != "binomial":
        raise UnsupportedScenario("log-odds adjustment needs a binary outcome model")
    if scenario.s_y != 1:
        raise UnsupportedScenario("log-odds bounds require s_y = 1")
    if theta_method not in ("plugin", "ipw-alt"):
        raise UnsupportedScenario("log-odds constraint uses plugin or ipw-alt")
    tab = constraint_table(data, nuis, scenario, theta_method)
    eps = nuis.psi.clip_eps
    lo, hi = log_odds_bounds(tab.psi, tab.D, tab.s)
    if cfg.bracket is not None:
        lo, hi = max(lo, min(cfg.bracket)), min(hi, max(cfg.bracket))
    psi, D, W = tab.psi.ravel(), tab.D.ravel(), tab.W.ravel()

    def f(lams):
        return kernels.logodds_scan(psi, D, W, np.atleast_1d(lams), eps) / tab.n

    theta = float(f(0.0)[0])
    sigma2 = gradient_variance(data, nuis, scenario)
    if abs(theta) <= bound:
        return FairPredictor("xent_log_odds", nuis, scenario, theta, sigma2, 0.0, bound,
                             theta_method, eps, achieved=0.0, eps_interval=(lo, hi))
    target = float(np.sign(theta) * bound)
    lam, err, (g, v) = _grid_search(f, lo, hi, target, cfg, clip=(lo, hi))
    if err > cfg.tol:
        warnings.warn(f"lambda search ended with |Theta - target| = {err:.3g} > {cfg.tol:g}",
                      NoSignChange, stacklevel=2)
    return FairPredictor("xent_log_odds", nuis, scenario, theta, sigma2, lam, bound,
                         theta_method, eps, achieved=err, eps_interval=(lo, hi),
                         diagnostics={"monotone_violations": _monotone_violations(v)})


def fit_adjust(data: Dataset, nuis: NuisanceSet, scenario: Scenario, risk: str = "mse",
               method: str = "plugin", bound: float = 0.0,
               cfg: LambdaSearchConfig | None = None) -> FairPredictor:
    """Build the constrained predictor for ``risk`` in {mse, xent, xent-odds}."""
    if risk == "mse":
        est = estimate(data, nuis, scenario, method)
        field = gradient_field(data, nuis, scenario)
        return adjust_mse(nuis, scenario, est, field, bound)
    if risk == "xent":
        return solve_lambda_xent(data, nuis, scenario, method, cfg, bound)
    if risk == "xent-odds":
        return adjust_log_odds(data, nuis, scenario, cfg, bound, method)
    raise ValueError(f"unknown risk {risk!r}")
