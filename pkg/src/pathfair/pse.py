"""Estimators of pathway-specific effect constraints and their gradients.

Two fixed scenarios on the graph ``X -> {S, M, L, Y}``, ``S -> M -> L -> Y``
with ``S -> L``, ``S -> Y``, ``M -> Y`` are supported by four estimators:

``rho1``
    unfair pathways ``S -> Y`` and ``S -> L -> Y``; ``M`` is held at the
    baseline level of ``S``.
``rho2``
    unfair pathways ``S -> Y``, ``S -> M -> Y`` and ``S -> M -> L -> Y``;
    ``L`` responds to the baseline level of ``S`` directly.

Any other identified pathway set is handled by the ``generic`` scenario,
which offers the plug-in estimator and the gradient only.

Internally every rho1/rho2 computation runs on a :class:`Cube`: the
outcome regression at all eight ``(s, m, l)`` configurations together with
the propensity and mediator probabilities, evaluated once per row.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .exceptions import UnsupportedScenario
from .graph import CausalPartition, Dag, PathSet, partition
from .glm import NuisanceSet

METHODS = ("plugin", "ipw", "ipw-alt", "aipw")


@dataclass(frozen=True)
class Scenario:
    """Which constraint is estimated.

    Attributes
    ----------
    tag : {"rho1", "rho2", "generic"}
    partition : CausalPartition, optional
        Required for ``generic``.
    s, m, l, y : str
        Column names of the fixed layout.
    """

    tag: str
    partition: CausalPartition | None = None
    s: str = "s"
    m: str = "m"
    l: str = "l"  # noqa: E741
    y: str = "y"

    def __post_init__(self):
        if self.tag not in ("rho1", "rho2", "generic"):
            raise UnsupportedScenario(f"unknown scenario {self.tag!r}")
        if self.tag == "generic" and self.partition is None:
            raise UnsupportedScenario("generic scenario needs a partition")

    @property
    def s_y(self) -> int:
        return 1 if self.partition is None else self.partition.s_y

    def to_dict(self) -> dict:
        d = {"tag": self.tag, "s": self.s, "m": self.m, "l": self.l, "y": self.y}
        if self.partition is not None:
            d["partition"] = self.partition.to_dict()
            d["partition"]["assignment"] = dict(self.partition.assignment)
        return d

    @classmethod
    def from_dict(cls, d) -> "Scenario":
        part = None
        if "partition" in d:
            p = d["partition"]
            part = CausalPartition(p["sensitive"], p["outcome"], tuple(p["x_vars"]),
                                   tuple(p["m_rho"]), tuple(p["l_rho"]), int(p["s_y"]),
                                   dict(p.get("assignment", {})))
        return cls(d["tag"], part, d.get("s", "s"), d.get("m", "m"), d.get("l", "l"),
                   d.get("y", "y"))


RHO1 = Scenario("rho1")
RHO2 = Scenario("rho2")


def scenario_for(dag: Dag, rho: PathSet) -> Scenario:
    """Pick the fixed scenario when ``(dag, rho)`` matches it, else generic.

    The fixed layouts are recognised from the partition: one mediator in
    ``M_rho`` and one other mediator, with ``s_y = 1``.
    """
    part = partition(dag, rho)
    s, y = part.sensitive, part.outcome
    meds = [v for v in dag.causal_nodes() if v != y]
    if part.s_y == 1 and len(meds) == 2 and len(part.m_rho) == 1:
        first, second = meds  # topological order: first -> second
        full = {(s, first), (s, second), (s, y), (first, second), (first, y), (second, y)}
        if full <= dag.edges:
            if part.m_rho == (first,):
                return Scenario("rho1", part, s=s, m=first, l=second, y=y)
            return Scenario("rho2", part, s=s, m=first, l=second, y=y)
    return Scenario("generic", part)


@dataclass
class ConstraintEstimate:
    """Estimated constraint value with its per-row contributions."""

    value: float
    method: str
    contributions: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return int(self.contributions.shape[0])

    @property
    def std_error(self) -> float:
        """Monte Carlo standard error of the row average."""
        return float(np.std(self.contributions, ddof=1) / np.sqrt(self.n))

    def to_dict(self, sigma2=None) -> dict:
        d = {"method": self.method, "theta": float(self.value), "n": self.n}
        if sigma2 is not None:
            d["sigma2"] = float(sigma2)
        return d


@dataclass
class GradientField:
    """Gradient values on the rows and the model-based ``E[D^2]``."""

    values: np.ndarray = field(repr=False)
    sigma2: float
    scenario: str

    @property
    def n(self) -> int:
        return int(self.values.shape[0])


# -- cube machinery ----------------------------------------------------------

def _bern(p1):
    """Stack (P(V=0), P(V=1)) on a new leading axis."""
    return np.stack([1.0 - p1, p1])


@dataclass
class Cube:
    """Nuisance evaluations on every row for the fixed layout.

    Attributes
    ----------
    psi : ndarray, shape (2, 2, 2, n)
        ``psi[s, m, l]`` is the outcome regression at that configuration.
    ps : ndarray, shape (2, n)
        ``ps[s] = pi(s | X)``.
    fm : ndarray, shape (2, 2, n)
        ``fm[s, m] = f_M(m | s, X)``.
    fl : ndarray, shape (2, 2, 2, n)
        ``fl[s, m, l] = f_L(l | s, m, X)``.
    s, m, l : int arrays
    y : float array
    """

    psi: np.ndarray
    ps: np.ndarray
    fm: np.ndarray
    fl: np.ndarray
    s: np.ndarray
    m: np.ndarray
    l: np.ndarray  # noqa: E741
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.s.shape[0]

    def at_obs(self, arr) -> np.ndarray:
        """Entry of a (2, 2, 2, n) array at each row's observed (s, m, l)."""
        return arr[self.s, self.m, self.l, np.arange(self.n)]

    def with_psi(self, psi) -> "Cube":
        return Cube(psi, self.ps, self.fm, self.fl, self.s, self.m, self.l, self.y)


def config_overrides(scn: Scenario):
    """Yield ``((s, m, l), overrides)`` for the eight configurations."""
    for s, m, l in itertools.product((0, 1), repeat=3):  # noqa: E741
        yield (s, m, l), {scn.s: s, scn.m: m, scn.l: l}


def evaluate_cube(data: Dataset, nuis: NuisanceSet, scn: Scenario = RHO1,
                  predictor=None) -> Cube:
    """Evaluate the nuisances of the fixed layout on ``data``.

    Parameters
    ----------
    predictor : callable, optional
        ``predictor(data, overrides)`` replacing the outcome regression.
    """
    if scn.tag == "generic":
        raise UnsupportedScenario("cube evaluation needs the rho1/rho2 layout")
    pred = predictor or nuis.psi.predict
    n = data.n
    psi = np.empty((2, 2, 2, n))
    for (s, m, l), ov in config_overrides(scn):  # noqa: E741
        psi[s, m, l] = pred(data, ov)
    ps = _bern(nuis.pi.predict(data))
    fm = np.stack([_bern(nuis.f_m.predict(data, {scn.s: s})) for s in (0, 1)])
    fl = np.empty((2, 2, 2, n))
    for s in (0, 1):
        for m in (0, 1):
            fl[s, m] = _bern(nuis.f_l.predict(data, {scn.s: s, scn.m: m}))
    as_int = lambda c: data[c].astype(np.intp)  # noqa: E731
    return Cube(psi, ps, fm, fl, as_int(scn.s), as_int(scn.m), as_int(scn.l),
                data[scn.y] if scn.y in data else np.full(n, np.nan))


def _parts(c: Cube, psi, tag):
    """Marginalised regressions shared by the estimators."""
    # theta0(X) = E[Y | S=0, X] through the mediator densities at S=0
    inner0 = np.einsum("mln,mln->mn", psi[0], c.fl[0])
    theta0 = np.einsum("mn,mn->n", c.fm[0], inner0)
    if tag == "rho1":
        bar = np.einsum("mln,mln->mn", psi[1], c.fl[1])  # L integrated at S=1
        theta1 = np.einsum("mn,mn->n", c.fm[0], bar)
    else:
        bar = np.einsum("mln,mln->mn", psi[1], c.fl[0])  # L integrated at S=0
        theta1 = np.einsum("mn,mn->n", c.fm[1], bar)
    return bar, theta1, theta0


def cube_contributions(c: Cube, method: str, tag: str, psi=None, y=None) -> np.ndarray:
    """Per-row contributions of ``method`` computed from a cube.

    ``psi`` and ``y`` replace the cube's regression and outcome; both enter
    every estimator linearly.
    """
    if tag not in ("rho1", "rho2"):
        raise UnsupportedScenario(f"{method} is available for rho1/rho2 only")
    psi = c.psi if psi is None else psi
    y = c.y if y is None else y
    idx = np.arange(c.n)
    S, M, L = c.s, c.m, c.l
    bar, theta1, theta0 = _parts(c, psi, tag)
    if method == "plugin":
        return theta1 - theta0
    pS = c.ps[S, idx]
    p0, p1 = c.ps[0], c.ps[1]
    i0, i1 = (S == 0), (S == 1)
    if tag == "rho1":
        ratio_m = c.fm[0, M, idx] / c.fm[S, M, idx]
        if method == "ipw":
            return (2 * S - 1) / pS * ratio_m * y
        if method == "ipw-alt":
            ratio_l = c.fl[1, M, L, idx] / c.fl[S, M, L, idx]
            return i0 / p0 * (ratio_l * psi[1, M, L, idx] - psi[0, M, L, idx])
        if method == "aipw":
            bar_obs = bar[M, idx]
            return (i1 / p1 * ratio_m * (y - bar_obs)
                    + i0 / p0 * (bar_obs - theta1) + theta1
                    - (i0 / p0 * (y - theta0) + theta0))
    else:
        ratio_l = c.fl[0, M, L, idx] / c.fl[S, M, L, idx]
        if method == "ipw":
            return (2 * S - 1) / pS * ratio_l * y
        ratio_m = c.fm[1, M, idx] / c.fm[S, M, idx]
        if method == "ipw-alt":
            return i0 / p0 * (ratio_m * psi[1, M, L, idx] - psi[0, M, L, idx])
        if method == "aipw":
            psi1 = psi[1, M, L, idx]
            bar_obs = bar[M, idx]
            return (i1 / p1 * ratio_l * (y - psi1)
                    + i0 / p0 * ratio_m * (psi1 - bar_obs)
                    + i1 / p1 * (bar_obs - theta1) + theta1
                    - (i0 / p0 * (y - theta0) + theta0))
    raise UnsupportedScenario(f"unknown method {method!r}")


def cube_gradient(c: Cube, tag: str) -> np.ndarray:
    """Gradient at all eight configurations, shape (2, 2, 2, n)."""
    D = np.empty_like(c.psi)
    D[0] = -1.0 / c.ps[0]
    if tag == "rho1":
        D[1] = (c.fm[0] / (c.ps[1] * c.fm[1]))[:, None, :]
    elif tag == "rho2":
        D[1] = c.fl[0] / (c.ps[1] * c.fl[1])
    else:
        raise UnsupportedScenario(tag)
    return D


def linear_weights(c: Cube, method: str, tag: str) -> np.ndarray:
    """Weights ``W`` with ``sum(W * g) / n`` equal to the estimator at ``g``.

    Here the outcome is replaced by ``g`` at the observed configuration, so
    the estimator becomes a linear functional of the cube ``g`` alone. The
    weights are recovered exactly from nine evaluations on unit inputs.
    """
    W = np.zeros_like(c.psi)
    zero_y = np.zeros(c.n)
    for s, m, l in itertools.product((0, 1), repeat=3):  # noqa: E741
        e = np.zeros_like(c.psi)
        e[s, m, l] = 1.0
        W[s, m, l] = cube_contributions(c, method, tag, psi=e, y=zero_y)
    wy = cube_contributions(c, method, tag, psi=np.zeros_like(c.psi), y=np.ones(c.n))
    W[c.s, c.m, c.l, np.arange(c.n)] += wy
    return W


# -- generic scenario --------------------------------------------------------

def _generic_nodes(part: CausalPartition):
    return [v for v in part.m_rho + part.l_rho if v != part.outcome]


def _density(nuis, data, node, overrides):
    p1 = nuis.density(node).predict(data, overrides)
    val = overrides[node] if node in overrides else data[node]
    return np.where(np.asarray(val) == 1, p1, 1.0 - p1)


def generic_plugin_contributions(data: Dataset, nuis: NuisanceSet, part: CausalPartition,
                                 predictor=None, transform=None) -> np.ndarray:
    """Per-row plug-in values by exact enumeration over binary mediators."""
    pred = predictor or nuis.psi.predict
    tf = transform or (lambda v: v)
    S = part.sensitive
    nodes = _generic_nodes(part)
    l_nodes = [v for v in part.l_rho if v != part.outcome]
    out = np.zeros(data.n)
    for cfg in itertools.product((0, 1), repeat=len(nodes)):
        ov = dict(zip(nodes, cfg))
        pm = {}
        pl = {}
        for s in (0, 1):
            o = dict(ov, **{S: s})
            pm[s] = np.ones(data.n)
            for v in part.m_rho:
                pm[s] = pm[s] * _density(nuis, data, v, o)
            pl[s] = np.ones(data.n)
            for v in l_nodes:
                pl[s] = pl[s] * _density(nuis, data, v, o)
        y0 = tf(pred(data, dict(ov, **{S: 0})))
        if part.s_y == 1:
            y1 = tf(pred(data, dict(ov, **{S: 1})))
            out += (y1 * pl[1] - y0 * pl[0]) * pm[0]
        else:
            out += (pm[1] - pm[0]) * y0 * pl[0]
    return out


def gradient_values(data: Dataset, nuis: NuisanceSet, scn: Scenario,
                    overrides=None) -> np.ndarray:
    """Gradient at each row (columns optionally overridden)."""
    ov = dict(overrides or {})
    if scn.tag == "generic":
        part = scn.partition
        S = part.sensitive
        s = ov[S] if S in ov else data[S]
        s = np.broadcast_to(np.asarray(s, dtype=float), (data.n,))
        p1 = nuis.pi.predict(data, ov)
        pS = np.where(s == 1, p1, 1.0 - p1)
        base = 1 if part.s_y == 1 else 0
        ratio = np.ones(data.n)
        for v in part.m_rho:
            num = _density(nuis, data, v, dict(ov, **{S: 1 - base}))
            den = _density(nuis, data, v, ov)
            ratio = ratio * num / den
        if part.s_y == 1:
            return (2 * s - 1) / pS * ratio
        return (1 - s) / pS * (ratio - 1.0)
    s = np.broadcast_to(np.asarray(ov.get(scn.s, data[scn.s]), dtype=float), (data.n,))
    p1 = nuis.pi.predict(data)
    pS = np.where(s == 1, p1, 1.0 - p1)
    if scn.tag == "rho1":
        mdl, target = nuis.f_m, scn.m
    else:
        mdl, target = nuis.f_l, scn.l
    v = np.asarray(ov.get(target, data[target]), dtype=float)
    q0 = mdl.predict(data, dict(ov, **{scn.s: 0}))
    qs = mdl.predict(data, ov)
    ratio = np.where(v == 1, q0 / qs, (1.0 - q0) / (1.0 - qs))
    return (2 * s - 1) / pS * ratio


# -- public estimators -------------------------------------------------------

def _estimate(data, nuis, scn, method, predictor, outcome):
    if scn.tag == "generic":
        if method != "plugin":
            raise UnsupportedScenario(f"{method} is available for rho1/rho2 only")
        contrib = generic_plugin_contributions(data, nuis, scn.partition, predictor)
        return ConstraintEstimate(float(np.mean(contrib)), method, contrib)
    c = evaluate_cube(data, nuis, scn, predictor)
    contrib = cube_contributions(c, method, scn.tag, y=outcome)
    return ConstraintEstimate(float(np.mean(contrib)), method, contrib)


def theta_plugin(data: Dataset, nuis: NuisanceSet, scenario: Scenario = RHO1,
                 predictor=None) -> ConstraintEstimate:
    """Plug-in (g-formula) estimator of the constraint.

    Parameters
    ----------
    predictor : callable, optional
        ``predictor(data, overrides)`` evaluated in place of the outcome
        regression, to re-evaluate the constraint at another predictor.
    """
    return _estimate(data, nuis, scenario, "plugin", predictor, None)


def theta_ipw(data: Dataset, nuis: NuisanceSet, scenario: Scenario = RHO1,
              outcome=None) -> ConstraintEstimate:
    """Inverse probability weighted estimator (outcome optionally replaced)."""
    return _estimate(data, nuis, scenario, "ipw", None, outcome)


def theta_ipw_alt(data: Dataset, nuis: NuisanceSet, scenario: Scenario = RHO1,
                  predictor=None) -> ConstraintEstimate:
    """Weighted estimator using the outcome regression on the S=0 rows."""
    return _estimate(data, nuis, scenario, "ipw-alt", predictor, None)


def theta_aipw(data: Dataset, nuis: NuisanceSet, scenario: Scenario = RHO1,
               predictor=None, outcome=None) -> ConstraintEstimate:
    """Augmented estimator; contributions are the evaluated influence terms."""
    return _estimate(data, nuis, scenario, "aipw", predictor, outcome)


def estimate(data: Dataset, nuis: NuisanceSet, scenario: Scenario, method: str,
             predictor=None, outcome=None) -> ConstraintEstimate:
    """Dispatch on ``method`` (one of ``METHODS``)."""
    if method not in METHODS:
        raise UnsupportedScenario(f"unknown method {method!r}")
    return _estimate(data, nuis, scenario, method, predictor, outcome)


def gradient_variance(data: Dataset, nuis: NuisanceSet, scenario: Scenario = RHO1) -> float:
    """``E[D^2]`` with ``S`` and the mediators integrated out under the models.

    Since ``D`` represents the plug-in functional, this equals the plug-in
    constraint of ``D`` itself, so shifting by ``theta * D / sigma2`` nulls
    the plug-in constraint exactly. It is also far less variable than the
    row mean of ``D**2``, whose tails follow the inverse propensity.
    """
    if scenario.tag == "generic":
        g = lambda d, o: gradient_values(d, nuis, scenario, o)  # noqa: E731
        contrib = generic_plugin_contributions(data, nuis, scenario.partition, g)
        return float(np.mean(contrib))
    c = evaluate_cube(data, nuis, scenario)
    D = cube_gradient(c, scenario.tag)
    W = linear_weights(c, "plugin", scenario.tag)
    return float(np.sum(W * D) / data.n)


def gradient_field(data: Dataset, nuis: NuisanceSet,
                   scenario: Scenario = RHO1) -> GradientField:
    """Gradient at the observed rows with the model-based variance."""
    D = gradient_values(data, nuis, scenario)
    return GradientField(D, gradient_variance(data, nuis, scenario), scenario.tag)


def gradient_mean_check(field: GradientField, data: Dataset | None = None) -> float:
    """Sample mean of the gradient; zero in the population."""
    return float(np.mean(field.values))
