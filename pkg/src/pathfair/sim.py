"""Simulation harness: data generating processes, oracle truths, replications.

Every generating process is described by true generalised linear models for
the propensity, the binary mediators and the outcome, so the same objects
serve as oracle nuisances. True risk and true constraint of a predictor are
computed on a large test sample of covariates, summing exactly over the
binary ``(S, mediator)`` configurations with oracle probabilities.

Tags
----
``misspec``
    two covariates, ``X1 ~ Bern(1/2)``, ``X2 ~ Unif(-2, 2)``; every
    nuisance depends on the product ``X1 X2``; Gaussian outcome, variance 4.
``highdim``
    ``p`` standard normal covariates, nuisances sparse in the first five;
    Gaussian outcome, variance 9.
``ate``
    ``X ~ Unif(-a, a)``, ``P(S=1|x) = expit(x)``, outcome mean
    ``0.5 + 0.2 x + 0.75 s``; only the edge ``S -> Y`` is unfair.
``nde``
    as ``ate`` with a binary mediator, ``P(M=1|s,x) = expit(2x + 1.5s)``
    and a constant propensity; the direct edge is unfair.
``discrete``
    one binary covariate, saturated models, binary or Gaussian outcome.
"""
from __future__ import annotations

import itertools
import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logit

from . import kernels
from .adjust import (
    LambdaSearchConfig, adjust_log_odds, constraint_table, shrink, solve_lambda_xent,
)
from .data import Dataset, write_csv
from .exceptions import BadSpec, PathFairError
from .glm import GlmModel, NuisanceSet, fit_nuisances
from .graph import Dag, PathSet
from .pse import METHODS, estimate, gradient_values, gradient_variance, scenario_for

TAGS = ("misspec", "highdim", "ate", "nde", "discrete")
NUISANCES = ("psi", "pi", "f_m", "f_l")
DEFAULT_BOUNDS = (0.0, 0.05, 0.1, 0.2, 0.4, 0.8)
EVAL_CHUNK = 100_000
RESULT_COLUMNS = ("rep", "n", "method", "bound", "risk", "constraint", "theta_n",
                  "lambda_n", "seconds")

FIG_C_EDGES = [("s", "m"), ("s", "l"), ("s", "y"), ("m", "l"), ("m", "y"), ("l", "y")]
RHO1_EDGES = [("s", "y"), ("s", "l"), ("l", "y")]
RHO2_EDGES = [("s", "y"), ("s", "m"), ("m", "y"), ("m", "l"), ("l", "y")]


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))


def interaction_free(terms):
    """Drop every product term (``"a:b"``)."""
    return [t for t in terms if ":" not in t]


def saturated(cols):
    """All products of subsets of ``cols``, intercept first."""
    out = ["1"]
    for k in range(1, len(cols) + 1):
        out += [":".join(c) for c in itertools.combinations(cols, k)]
    return out


@dataclass(frozen=True)
class DgpSpec:
    """Generating process tag, parameters and default seed."""

    tag: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.tag not in TAGS:
            raise BadSpec(f"unknown generating process {self.tag!r}")

    def __hash__(self):
        return hash((self.tag, json.dumps(self.params, sort_keys=True), self.seed))

    def to_dict(self):
        return {"tag": self.tag, "params": dict(self.params), "seed": self.seed}


class Dgp:
    """Concrete generating process built from a :class:`DgpSpec`.

    Attributes
    ----------
    x_names : list of str
    oracle : NuisanceSet
        True models (no probability clipping).
    noise_sd : float or None
        Outcome noise; None for a binary outcome.
    dag, rho : Dag, PathSet
    scenario : Scenario
    fit_terms : dict
        Correctly specified terms for each nuisance.
    """

    def __init__(self, spec: DgpSpec):
        self.spec = spec
        p = dict(spec.params)
        getattr(self, f"_build_{spec.tag}")(p)
        unknown = set(p) - self._known
        if unknown:
            raise BadSpec(f"unknown parameters for {spec.tag}: {sorted(unknown)}")
        nodes = ([(x, "covariate") for x in self.x_names] + [("s", "sensitive")]
                 + [(v, "mediator") for v in self.mediators] + [("y", "outcome")])
        self.dag = Dag([v for v, _ in nodes], dict(nodes), self._edges())
        self.scenario = scenario_for(self.dag, self.rho)

    # -- builders -----------------------------------------------------------
    def _fig_c(self, rho_name):
        self.mediators = ["m", "l"]
        self.rho = PathSet(RHO1_EDGES if rho_name == "rho1" else RHO2_EDGES)

    def _build_misspec(self, p):
        self._known = {"rho"}
        self._fig_c(p.get("rho", "rho1"))
        self.x_names = ["x1", "x2"]
        self._sample_x = lambda rng, n: {
            "x1": (rng.random(n) < 0.5).astype(float),
            "x2": rng.uniform(-2.0, 2.0, n),
        }
        g = lambda fam, terms, coef, tgt: GlmModel.fixed(fam, terms, coef, tgt, 0.0)  # noqa: E731
        self.oracle = NuisanceSet(
            psi=g("gaussian", ["1", "s", "m", "l", "x1", "x1:x2"], [-0.5, 1, 0.5, -0.5, -1, 2], "y"),
            pi=g("binomial", ["1", "x1", "x1:x2"], [0, -1, 2], "s"),
            f_m=g("binomial", ["1", "s", "x1", "x1:x2"], [-0.5, 0.5, -1, 2], "m"),
            f_l=g("binomial", ["1", "s", "m", "x1", "x1:x2"], [-1, 0.5, -0.5, -1, 2], "l"),
        )
        self.noise_sd = 2.0
        self.fit_terms = {k: getattr(self.oracle, k).spec.to_list() for k in NUISANCES}
        # misspecified fits keep both main effects and lose the product
        self.misspec_terms = {
            k: interaction_free(v) + (["x2"] if "x2" not in v else []) for k, v in self.fit_terms.items()
        }

    def _build_highdim(self, p):
        self._known = {"p", "rho"}
        self._fig_c(p.get("rho", "rho1"))
        dim = int(p.get("p", 100))
        if dim < 5:
            raise BadSpec("highdim needs p >= 5")
        self.x_names = [f"x{j + 1}" for j in range(dim)]
        self._sample_x = lambda rng, n: dict(zip(self.x_names, rng.standard_normal((dim, n))))
        lin = np.array([1.0, -1 / 2, 1 / 3, -1 / 4, 1 / 5])
        xs = self.x_names[:5]
        g = lambda fam, terms, coef, tgt: GlmModel.fixed(fam, terms, coef, tgt, 0.0)  # noqa: E731
        self.oracle = NuisanceSet(
            psi=g("gaussian", ["1", "s", "m", "l"] + xs, np.r_[0, 1, 1, 1, lin], "y"),
            pi=g("binomial", ["1"] + xs, np.r_[0, lin], "s"),
            f_m=g("binomial", ["1", "s"] + xs, np.r_[0, -1, lin], "m"),
            f_l=g("binomial", ["1", "s"] + xs, np.r_[0, 1, -lin], "l"),
        )
        self.noise_sd = 3.0
        full = self.x_names
        self.fit_terms = {
            "psi": ["1", "s", "m", "l"] + full,
            "pi": ["1"] + full,
            "f_m": ["1", "s"] + full,
            "f_l": ["1", "s", "m"] + full,
        }
        self.misspec_terms = dict(self.fit_terms)

    def _uniform_x(self, p):
        a = float(p.get("half_width", 2.0))
        if a <= 0:
            raise BadSpec("half_width must be positive")
        self.half_width = a
        self.x_names = ["x"]
        self._sample_x = lambda rng, n: {"x": rng.uniform(-a, a, n)}

    def _build_ate(self, p):
        self._known = {"half_width", "noise_sd"}
        self._uniform_x(p)
        self.mediators = []
        self.rho = PathSet([("s", "y")])
        g = lambda fam, terms, coef, tgt: GlmModel.fixed(fam, terms, coef, tgt, 0.0)  # noqa: E731
        self.oracle = NuisanceSet(
            psi=g("gaussian", ["1", "x", "s"], [0.5, 0.2, 0.75], "y"),
            pi=g("binomial", ["1", "x"], [0.0, 1.0], "s"),
        )
        self.noise_sd = float(p.get("noise_sd", 1.0))
        self.fit_terms = {"psi": ["1", "x", "s"], "pi": ["1", "x"]}
        self.misspec_terms = {"psi": ["1", "s"], "pi": ["1"]}

    def _build_nde(self, p):
        self._known = {"half_width", "noise_sd", "propensity"}
        self._uniform_x(p)
        self.mediators = ["m"]
        self.rho = PathSet([("s", "y")])
        prop = p.get("propensity", "constant")
        pi_coef = [0.0, 0.0] if prop == "constant" else [0.0, 1.0]
        if prop not in ("constant", "expit"):
            raise BadSpec("propensity must be 'constant' or 'expit'")
        g = lambda fam, terms, coef, tgt: GlmModel.fixed(fam, terms, coef, tgt, 0.0)  # noqa: E731
        self.oracle = NuisanceSet(
            psi=g("gaussian", ["1", "x", "s", "m"], [0.5, 0.2, 0.75, 0.5], "y"),
            pi=g("binomial", ["1", "x"], pi_coef, "s"),
            f_m=g("binomial", ["1", "x", "s"], [0.0, 2.0, 1.5], "m"),
        )
        self.noise_sd = float(p.get("noise_sd", 1.0))
        self.fit_terms = {"psi": ["1", "x", "s", "m"], "pi": ["1", "x"], "f_m": ["1", "x", "s"]}
        self.misspec_terms = {"psi": ["1", "s", "m"], "pi": ["1"], "f_m": ["1", "s"]}

    def _build_discrete(self, p):
        self._known = {"rho", "binary_y", "p_x", "coef"}
        self._fig_c(p.get("rho", "rho1"))
        self.x_names = ["x1"]
        px = float(p.get("p_x", 0.4))
        self._sample_x = lambda rng, n: {"x1": (rng.random(n) < px).astype(float)}
        binary_y = bool(p.get("binary_y", True))
        terms = {
            "pi": saturated(["x1"]),
            "f_m": saturated(["s", "x1"]),
            "f_l": saturated(["s", "m", "x1"]),
            "psi": saturated(["s", "m", "l", "x1"]),
        }
        coef = {
            "pi": [-0.3, 0.8],
            "f_m": [-0.4, 0.9, -0.6, 0.5],
            "f_l": [-0.2, 0.7, -0.8, 0.4, 0.3, 0.2, -0.5, -0.4],
            "psi": [-0.6, 1.1, 0.5, -0.4, 0.3, 0.2, -0.3, 0.4, 0.25, -0.2, 0.1,
                    -0.15, 0.2, 0.1, -0.1, 0.05],
        }
        coef.update({k: list(v) for k, v in p.get("coef", {}).items()})
        for k in terms:
            if len(coef[k]) != len(terms[k]):
                raise BadSpec(f"coef[{k!r}] needs {len(terms[k])} entries")
        fam = "binomial" if binary_y else "gaussian"
        g = lambda fam, k, tgt: GlmModel.fixed(fam, terms[k], coef[k], tgt, 0.0)  # noqa: E731
        self.oracle = NuisanceSet(psi=g(fam, "psi", "y"), pi=g("binomial", "pi", "s"),
                                  f_m=g("binomial", "f_m", "m"), f_l=g("binomial", "f_l", "l"))
        self.noise_sd = None if binary_y else 1.0
        self.fit_terms = dict(terms)
        self.misspec_terms = {k: [t for t in v if t.count(":") == 0] for k, v in terms.items()}

    def _edges(self):
        e = [(x, "s") for x in self.x_names] + [(x, "y") for x in self.x_names]
        e += [(x, v) for x in self.x_names for v in self.mediators]
        if self.mediators == ["m", "l"]:
            e += FIG_C_EDGES
        elif self.mediators == ["m"]:
            e += [("s", "m"), ("s", "y"), ("m", "y")]
        else:
            e += [("s", "y")]
        return e

    # -- public -------------------------------------------------------------
    @property
    def binary_y(self) -> bool:
        return self.noise_sd is None

    @property
    def outcome_family(self) -> str:
        return "binomial" if self.binary_y else "gaussian"

    def specs(self, misspecified=()) -> dict:
        """Fitting terms with the listed nuisances misspecified."""
        bad = set(misspecified) - set(NUISANCES)
        if bad:
            raise BadSpec(f"unknown nuisances {sorted(bad)}")
        return {k: (self.misspec_terms[k] if k in misspecified else v)
                for k, v in self.fit_terms.items()}

    def sample_x(self, n, rng) -> Dataset:
        cols = self._sample_x(rng, n)
        return Dataset({k: cols[k] for k in self.x_names}, self.x_names, binary=[],
                       validate=False)

    def generate(self, n: int, seed: int, stream: int = 0) -> Dataset:
        """Draw ``n`` rows; identical output for identical ``(seed, stream)``."""
        if n < 1:
            raise BadSpec("n must be positive")
        rng = make_rng(seed, stream)
        d = self.sample_x(n, rng)
        order = [("s", self.oracle.pi)] + [(v, self.oracle.density(v)) for v in self.mediators]
        for name, mdl in order:
            d.columns[name] = (rng.random(n) < mdl.predict(d)).astype(float)
        mu = self.oracle.psi.predict(d)
        if self.binary_y:
            d.columns["y"] = (rng.random(n) < mu).astype(float)
        else:
            d.columns["y"] = mu + self.noise_sd * rng.standard_normal(n)
        return Dataset(d.columns, self.x_names, ["s"] + self.mediators)


def generate(dgp: DgpSpec, n: int, seed: int | None = None) -> Dataset:
    """Draw a dataset from ``dgp`` (seed defaults to ``dgp.seed``)."""
    return Dgp(dgp).generate(n, dgp.seed if seed is None else seed)


# -- oracle evaluation ---------------------------------------------------------

class OracleEval:
    """Exact-in-configuration evaluation on a covariate test sample.

    For every test row and every binary configuration of ``S`` and the
    mediators, stores the oracle joint probability, the oracle regression
    and the weight of that configuration in the true constraint.
    """

    def __init__(self, dgp: Dgp, test_n: int, seed: int, min_n: int = 100_000,
                 keep_data: bool = True):
        if test_n < min_n:
            raise BadSpec(f"test_n must be at least {min_n}")
        self.dgp = dgp
        self.n = test_n
        rng = make_rng(seed, 1)
        chunks, parts = [], []
        # fixed-size chunks bound memory for wide covariates
        for start in range(0, test_n, EVAL_CHUNK):
            x = dgp.sample_x(min(EVAL_CHUNK, test_n - start), rng)
            cols = dict(x.columns)
            for v in ["s", *dgp.mediators, "y"]:
                cols[v] = np.zeros(x.n)
            d = Dataset(cols, dgp.x_names, [], validate=False)
            parts.append(self._evaluate(d))
            if keep_data:
                chunks.append(d)
        self.points = parts[0][0]
        self.W, self.psi0, self.D0, self.joint = (
            np.concatenate([p[j] for p in parts], axis=1) for j in range(1, 5))
        self._chunks = chunks
        if dgp.binary_y:
            self.cond_var = self.psi0 * (1.0 - self.psi0)
        else:
            self.cond_var = np.full_like(self.psi0, dgp.noise_sd ** 2)

    def _evaluate(self, d: Dataset):
        o = self.dgp.oracle
        tab = constraint_table(d, o, self.dgp.scenario, "plugin")
        joint = np.empty_like(tab.psi)
        for k, pt in enumerate(tab.points):
            pr = o.pi.predict(d, pt)
            pr = pr if pt["s"] == 1 else 1.0 - pr
            for v in self.dgp.mediators:
                q = o.density(v).predict(d, pt)
                pr = pr * (q if pt[v] == 1 else 1.0 - q)
            joint[k] = pr
        return tab.points, tab.W, tab.psi, tab.D, joint

    def values(self, fn) -> np.ndarray:
        """Stack ``fn(data, overrides)`` over the configurations."""
        if not self._chunks:
            raise BadSpec("test covariates were not kept")
        return np.concatenate([np.array([fn(d, pt) for pt in self.points])
                               for d in self._chunks], axis=1)

    def constraint(self, vals) -> float:
        return float(np.sum(self.W * vals) / self.n)

    def risk(self, vals, loss: str = "mse") -> float:
        if loss == "mse":
            r = self.cond_var + (self.psi0 - vals) ** 2
        else:
            v = np.clip(vals, 1e-12, 1 - 1e-12)
            r = -(self.psi0 * np.log(v) + (1.0 - self.psi0) * np.log1p(-v))
        return float(np.sum(self.joint * r) / self.n)

    def sigma2(self) -> float:
        return float(np.sum(self.joint * self.D0 ** 2) / self.n)


@dataclass
class OracleReport:
    """True constraint, gradient variance and risks."""

    theta: float
    sigma2: float
    risk_psi0: float
    risk_star: float
    test_n: int

    @property
    def gap(self) -> float:
        return self.risk_star - self.risk_psi0

    def to_dict(self):
        return {"theta": self.theta, "sigma2": self.sigma2, "risk_psi0": self.risk_psi0,
                "risk_star": self.risk_star, "test_n": self.test_n}


def oracle_truths(dgp: DgpSpec, test_n: int = 1_000_000, seed: int | None = None,
                  _eval: OracleEval | None = None) -> OracleReport:
    """Constraint of the true regression, gradient variance, and the squared
    error risks of the true regression and of its optimal adjustment."""
    ev = _eval or OracleEval(Dgp(dgp), test_n, dgp.seed if seed is None else seed,
                             keep_data=False)
    theta = ev.constraint(ev.psi0)
    s2 = ev.sigma2()
    star = ev.psi0 - theta / s2 * ev.D0
    return OracleReport(theta, s2, ev.risk(ev.psi0), ev.risk(star), ev.n)


def gradient_variance_integral(dgp: DgpSpec) -> float:
    """Gradient variance by adaptive quadrature over a scalar uniform X."""
    from scipy.integrate import quad

    g = Dgp(dgp)
    if g.x_names != ["x"]:
        raise BadSpec("quadrature needs a single uniform covariate")
    a = g.half_width
    scn = g.scenario
    meds = g.mediators

    def integrand(x):
        d = Dataset({"x": [x], "s": [0.0], **{v: [0.0] for v in meds}, "y": [0.0]},
                    ["x"], [], validate=False)
        tot = 0.0
        for cfg in itertools.product((0, 1), repeat=1 + len(meds)):
            pt = dict(zip(["s", *meds], cfg))
            pr = g.oracle.pi.predict(d, pt)[0]
            pr = pr if pt["s"] == 1 else 1.0 - pr
            for v in meds:
                q = g.oracle.density(v).predict(d, pt)[0]
                pr *= q if pt[v] == 1 else 1.0 - q
            D = gradient_values(d, g.oracle, scn, pt)[0]
            tot += pr * D * D
        return tot / (2 * a)

    val, _ = quad(integrand, -a, a, epsabs=1e-10, epsrel=1e-10, limit=200)
    return float(val)


# -- replications --------------------------------------------------------------

@dataclass
class SimPlan:
    """Replication design.

    Attributes
    ----------
    dgp : DgpSpec
    sample_sizes : list of int
    replications : int
    misspecified : list of str
        Nuisances fitted with the reduced (product-free) terms.
    methods : list of str
    bounds : list of float
    test_n : int
    seed : int
        Replication ``r`` uses seed ``seed + r``.
    risk : {"mse", "xent", "xent-odds"}
    l1 : {"none", "cv"}
    threads : int
    record_timing : bool
        When False the ``seconds`` column is written as 0 so that outputs
        are byte-reproducible.
    """

    dgp: DgpSpec
    sample_sizes: list = field(default_factory=lambda: [200, 1600])
    replications: int = 200
    misspecified: list = field(default_factory=list)
    methods: list = field(default_factory=lambda: list(METHODS))
    bounds: list = field(default_factory=lambda: list(DEFAULT_BOUNDS))
    test_n: int = 100_000
    seed: int = 0
    risk: str = "mse"
    l1: str = "none"
    threads: int = 1
    record_timing: bool = False
    lambda_grid: int = 2001
    cv_folds: int = 10

    def __post_init__(self):
        if isinstance(self.dgp, dict):
            self.dgp = DgpSpec(**self.dgp)
        if self.replications < 1:
            raise BadSpec("replications must be at least 1")
        if self.test_n < 100_000:
            raise BadSpec("test_n must be at least 1e5")
        if not self.sample_sizes or min(self.sample_sizes) < 1:
            raise BadSpec("sample_sizes must be positive")
        if set(self.methods) - set(METHODS):
            raise BadSpec(f"unknown methods {sorted(set(self.methods) - set(METHODS))}")
        if any(b < 0 for b in self.bounds):
            raise BadSpec("bounds must be nonnegative")
        if self.risk not in ("mse", "xent", "xent-odds"):
            raise BadSpec(f"unknown risk {self.risk!r}")
        if self.l1 not in ("none", "cv"):
            raise BadSpec("l1 must be 'none' or 'cv'")
        if isinstance(self.misspecified, str):
            self.misspecified = [] if self.misspecified in ("", "none") else [self.misspecified]

    @classmethod
    def from_dict(cls, d) -> "SimPlan":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise BadSpec(f"unknown plan fields {sorted(extra)}")
        if "dgp" not in d:
            raise BadSpec("plan needs a dgp")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SimPlan":
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except (json.JSONDecodeError, TypeError) as exc:
                raise BadSpec(f"{path}: {exc}") from exc

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["dgp"] = self.dgp.to_dict()
        return d


@dataclass
class SimResult:
    rows: list
    failures: list
    oracle: OracleReport
    plan: SimPlan

    @property
    def n_cells(self) -> int:
        return len(self.rows) + len(self.failures)

    def column(self, name, **where) -> np.ndarray:
        return np.array([r[name] for r in self.rows
                         if all(r[k] == v for k, v in where.items())], dtype=float)

    def to_csv(self, path):
        write_csv(path, {c: [r[c] for r in self.rows] for c in RESULT_COLUMNS})


def _fit_cell(dgp: Dgp, plan: SimPlan, data: Dataset, seed: int):
    l1 = "cv" if plan.l1 == "cv" else 0.0
    return fit_nuisances(data, dgp.specs(plan.misspecified), outcome_family=dgp.outcome_family,
                         l1=l1, cv_folds=plan.cv_folds, seed=seed, raise_nonconverged=True)


def run_cell(dgp: Dgp, plan: SimPlan, ev: OracleEval, rep: int, n: int):
    """All (method, bound) rows of one replication at one sample size."""
    seed = plan.seed + rep
    t0 = time.perf_counter()
    data = dgp.generate(n, seed, stream=n)
    nuis = _fit_cell(dgp, plan, data, seed)
    scn = dgp.scenario
    base = ev.values(nuis.psi.predict)
    D = ev.values(lambda d, o: gradient_values(d, nuis, scn, o))
    loss = "mse" if plan.risk == "mse" else "xent"
    t_fit = time.perf_counter() - t0
    rows = []
    if plan.risk == "mse":
        sigma2 = gradient_variance(data, nuis, scn)
        c_base, c_D = ev.constraint(base), ev.constraint(D)
        for method in plan.methods:
            t1 = time.perf_counter()
            theta = estimate(data, nuis, scn, method).value
            for b in plan.bounds:
                lam = shrink(theta, b) / sigma2
                rows.append(dict(rep=rep, n=n, method=method, bound=float(b),
                                 risk=ev.risk(base - lam * D, loss),
                                 constraint=c_base - lam * c_D, theta_n=theta, lambda_n=lam,
                                 seconds=t_fit + time.perf_counter() - t1))
        return rows
    cfg = LambdaSearchConfig(grid_size=plan.lambda_grid)
    for method in plan.methods:
        for b in plan.bounds:
            t1 = time.perf_counter()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                if plan.risk == "xent":
                    fp = solve_lambda_xent(data, nuis, scn, method, cfg, b)
                    vals = kernels.xent_path(base, D, fp.lam)[0].reshape(base.shape)
                else:
                    fp = adjust_log_odds(data, nuis, scn, cfg, b, method)
                    vals = np.clip(base - fp.lam * D, 0.0, 1.0)
            if plan.risk == "xent":
                con = ev.constraint(vals)
            else:
                eps = nuis.psi.clip_eps
                con = ev.constraint(logit(np.clip(vals, eps, 1.0 - eps)))
            rows.append(dict(rep=rep, n=n, method=method, bound=float(b),
                             risk=ev.risk(vals, loss), constraint=con,
                             theta_n=fp.theta, lambda_n=fp.lam,
                             seconds=t_fit + time.perf_counter() - t1))
    return rows


def run_plan(plan: SimPlan, oracle_eval: OracleEval | None = None) -> SimResult:
    """Run every replication of ``plan``; failed cells are recorded, not fatal."""
    dgp = Dgp(plan.dgp)
    if plan.risk != "mse" and not dgp.binary_y:
        raise BadSpec("cross-entropy plans need a binary outcome")
    ev = oracle_eval or OracleEval(dgp, plan.test_n, plan.seed)
    truth = oracle_truths(plan.dgp, _eval=ev)
    cells = [(r, n) for r in range(plan.replications) for n in plan.sample_sizes]

    def work(cell):
        r, n = cell
        try:
            return run_cell(dgp, plan, ev, r, n), None
        except PathFairError as exc:
            return [], dict(rep=r, n=n, error=f"{type(exc).__name__}: {exc}")

    if plan.threads > 1:
        with ThreadPoolExecutor(plan.threads) as pool:
            out = list(pool.map(work, cells))
    else:
        out = [work(c) for c in cells]
    rows, failures = [], []
    for res, fail in out:
        rows.extend(res)
        if fail:
            failures.append(fail)
    if not plan.record_timing:
        for r in rows:
            r["seconds"] = 0.0
    return SimResult(rows, failures, truth, plan)


# -- summaries ----------------------------------------------------------------

SUMMARY_COLUMNS = ("n", "method", "bound", "count", "risk_q25", "risk_median", "risk_q75",
                   "constraint_q25", "constraint_median", "constraint_q75",
                   "abs_constraint_median")


@dataclass
class SummaryTable:
    rows: list

    def lookup(self, **where) -> dict:
        hits = [r for r in self.rows if all(r[k] == v for k, v in where.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} summary rows match {where}")
        return hits[0]

    def to_csv(self, path):
        write_csv(path, {c: [r[c] for r in self.rows] for c in SUMMARY_COLUMNS})


def summarize(result: SimResult) -> SummaryTable:
    """Quartiles of risk and constraint per (n, method, bound)."""
    if not result.rows:
        raise BadSpec("empty result")
    keys = []
    for r in result.rows:
        k = (r["n"], r["method"], r["bound"])
        if k not in keys:
            keys.append(k)
    keys.sort(key=lambda k: (k[0], METHODS.index(k[1]), k[2]))
    out = []
    for n, method, b in keys:
        risk = result.column("risk", n=n, method=method, bound=b)
        con = result.column("constraint", n=n, method=method, bound=b)
        rq = np.percentile(risk, [25, 50, 75])
        cq = np.percentile(con, [25, 50, 75])
        out.append(dict(n=n, method=method, bound=b, count=len(risk),
                        risk_q25=rq[0], risk_median=rq[1], risk_q75=rq[2],
                        constraint_q25=cq[0], constraint_median=cq[1], constraint_q75=cq[2],
                        abs_constraint_median=float(np.median(np.abs(con)))))
    return SummaryTable(out)
