"""Command-line interface.

Subcommands
-----------
check-id     identifiability of a pathway set and its partition
fit-adjust   fit nuisances on a CSV, estimate the constraint, save a predictor
predict      apply a saved predictor to a CSV
evaluate     estimate the constraint and risk of a saved predictor on a CSV
simulate     run a simulation plan

Exit codes
----------
0 success; 1 not identified (check-id) or too many failed simulation cells;
2 malformed graph, config or arguments; 3 data or plan errors;
4 fit did not converge; 5 degenerate variance or other numerical failure.

Results go to stdout (or ``--out``); warnings and errors go to stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from contextlib import contextmanager

import numpy as np

from .adjust import FairPredictor, LambdaSearchConfig, fit_adjust
from .data import Dataset, write_csv
from .exceptions import (
    BadSpec, DataError, DegenerateVariance, EmptyFeasibleInterval, GraphError,
    NegativeDiscriminant, NotConverged, NotIdentified, PathFairError, RankDeficient,
    UnsupportedScenario,
)
from .glm import CLIP_EPS, FeatureSpec, NuisanceSet, fit_binomial, fit_nuisances, select_penalty_cv
from .graph import Dag, check_identifiability, partition
from .pse import METHODS, estimate, scenario_for

EXIT_OK, EXIT_NOT_IDENTIFIED, EXIT_CONFIG, EXIT_DATA, EXIT_NOT_CONVERGED, EXIT_NUMERIC = range(6)

DEFAULTS = {
    "method": "plugin",
    "risk": "mse",
    "bound": 0.0,
    "seed": 0,
    "clip_eps": CLIP_EPS,
    "lambda_grid": 2001,
    "l1": 0.0,
    "cv_folds": 10,
    "specs": None,
}


def exit_code(exc: BaseException) -> int:
    """Map a package exception to its exit code."""
    if isinstance(exc, NotIdentified):
        return EXIT_NOT_IDENTIFIED
    if isinstance(exc, (GraphError, UnsupportedScenario)):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, BadSpec, RankDeficient)):
        return EXIT_DATA
    if isinstance(exc, NotConverged):
        return EXIT_NOT_CONVERGED
    if isinstance(exc, (DegenerateVariance, NegativeDiscriminant, EmptyFeasibleInterval)):
        return EXIT_NUMERIC
    return EXIT_NUMERIC


def _err(msg):
    print(msg, file=sys.stderr)


@contextmanager
def _warnings_to_stderr(sink: list):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        yield
    for w in caught:
        msg = f"{w.category.__name__}: {w.message}"
        sink.append(msg)
        _err(f"warning: {msg}")


def _emit(obj, out_dir=None, name=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    print(text)
    if out_dir and name:
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write(text + "\n")


def _out_dir(path):
    if path is None:
        return None
    os.makedirs(path, exist_ok=True)
    return path


def load_config(args) -> dict:
    """Defaults, overridden by the config file, overridden by flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GraphError(f"{args.config}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise GraphError(f"{args.config}: unknown keys {sorted(unknown)}")
        cfg.update(doc)
    for key in ("method", "risk", "bound", "seed", "clip_eps", "lambda_grid"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


# -- graph-driven fitting -------------------------------------------------------

def graph_roles(dag: Dag):
    """Covariates, sensitive node, mediators in causal order, outcome."""
    x = [v for v in dag.nodes if dag.roles[v] == "covariate"]
    meds = [v for v in dag.causal_nodes() if v != dag.outcome]
    return x, dag.sensitive, meds, dag.outcome


def default_specs(dag: Dag) -> dict:
    """Main-effect terms of each node's graph parents."""
    x, s, meds, y = graph_roles(dag)

    def terms(node):
        return ["1"] + [p for p in dag.nodes if p in dag.parents(node)]

    specs = {"psi": terms(y), "pi": terms(s)}
    for key, v in zip(("f_m", "f_l"), meds):
        specs[key] = terms(v)
    for v in meds[2:]:
        specs[v] = terms(v)
    return specs


def load_data(path, dag: Dag, binary_y: bool) -> Dataset:
    x, s, meds, y = graph_roles(dag)
    data = Dataset.from_csv(path, x_names=x, binary=[s, *meds] + ([y] if binary_y else []))
    missing = [v for v in dag.nodes if v not in data]
    if missing:
        raise DataError(f"{path}: missing graph columns {missing}")
    return data


def fit_graph_nuisances(data: Dataset, dag: Dag, cfg: dict, outcome_family: str,
                        raise_nonconverged: bool) -> NuisanceSet:
    """Fit the outcome, propensity and one density per mediator."""
    x, s, meds, y = graph_roles(dag)
    specs = dict(default_specs(dag))
    specs.update(cfg.get("specs") or {})
    names = (s, meds[0] if meds else "_m", meds[1] if len(meds) > 1 else "_l", y)
    core = {k: specs[k] for k in ("psi", "pi", "f_m", "f_l") if k in specs}
    nuis = fit_nuisances(data, core, outcome_family=outcome_family, l1=cfg["l1"],
                         cv_folds=cfg["cv_folds"], seed=cfg["seed"], names=names,
                         raise_nonconverged=raise_nonconverged, clip_eps=cfg["clip_eps"])
    for v in meds[2:]:
        spec = FeatureSpec(specs[v])
        pen = cfg["l1"].get(v, 0.0) if isinstance(cfg["l1"], dict) else cfg["l1"]
        if pen == "cv":
            pen = select_penalty_cv(data, v, spec, cfg["cv_folds"], None, cfg["seed"])
        nuis.extra[v] = fit_binomial(data, v, spec, l1_penalty=float(pen),
                                     raise_nonconverged=raise_nonconverged,
                                     clip_eps=cfg["clip_eps"])
    return nuis


# -- subcommands --------------------------------------------------------------------

def cmd_check_id(args) -> int:
    dag, rho = Dag.from_json(args.graph)
    res = check_identifiability(dag, rho)
    print(str(res))
    if not res.identified:
        return EXIT_NOT_IDENTIFIED
    print(partition(dag, rho).describe())
    print(f"scenario = {scenario_for(dag, rho).tag}")
    return EXIT_OK


def cmd_fit_adjust(args) -> int:
    cfg = load_config(args)
    if cfg["method"] not in METHODS:
        raise UnsupportedScenario(f"unknown method {cfg['method']!r}")
    dag, rho = Dag.from_json(args.graph)
    scn = scenario_for(dag, rho)
    binary_y = cfg["risk"] != "mse"
    data = load_data(args.data, dag, binary_y)
    out = _out_dir(args.out)
    warned = []
    with _warnings_to_stderr(warned):
        nuis = fit_graph_nuisances(data, dag, cfg, "binomial" if binary_y else "gaussian",
                                   not args.allow_nonconverged)
        for key in ("psi", "pi", "f_m", "f_l"):
            mdl = getattr(nuis, key)
            if mdl is not None and not mdl.converged:
                warnings.warn(f"{key} fit did not converge", RuntimeWarning)
        search = LambdaSearchConfig(grid_size=int(cfg["lambda_grid"]))
        fp = fit_adjust(data, nuis, scn, cfg["risk"], cfg["method"], float(cfg["bound"]), search)
        _, clamps = fp.predict(data, return_clamps=True)
    metrics = {
        "mode": fp.mode,
        "method": fp.theta_method,
        "theta_n": fp.theta,
        "sigma2_n": fp.sigma2,
        "lambda_n": fp.lam,
        "bound": fp.bound,
        "achieved": None if np.isnan(fp.achieved) else fp.achieved,
        "eps_interval": None if fp.eps_interval is None else list(fp.eps_interval),
        "clamps": clamps,
        "n": data.n,
        "scenario": scn.tag,
        "backend": _backend(),
        "warnings": warned,
    }
    if cfg["method"] != "plugin" and scn.tag != "generic":
        metrics["std_error"] = estimate(data, nuis, scn, cfg["method"]).std_error
    if out:
        fp.save(os.path.join(out, "predictor.json"))
    _emit(metrics, out, "metrics.json")
    return EXIT_OK


def _backend():
    from .kernels import BACKEND
    return BACKEND


def _load_predictor(path) -> FairPredictor:
    try:
        return FairPredictor.load(path)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: not a predictor file ({exc})") from exc


def _predictor_data(path, fp: FairPredictor, binary_y=False) -> Dataset:
    data = Dataset.from_csv(path, binary=[])
    need = set()
    for mdl in (fp.nuis.psi, fp.nuis.pi, fp.nuis.f_m, fp.nuis.f_l, *fp.nuis.extra.values()):
        if mdl is not None:
            need |= mdl.spec.columns
    if fp.scenario.partition is not None:
        need.add(fp.scenario.partition.sensitive)
    missing = sorted(c for c in need if c not in data)
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    return data


def cmd_predict(args) -> int:
    fp = _load_predictor(args.predictor)
    data = _predictor_data(args.data, fp)
    pred = fp.predict(data)
    if args.out:
        write_csv(os.path.join(_out_dir(args.out), "predictions.csv"), {"prediction": pred})
    else:
        sys.stdout.write("prediction\n")
        sys.stdout.write("".join(format(float(v), ".17g") + "\n" for v in pred))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    fp = _load_predictor(args.predictor)
    data = _predictor_data(args.data, fp)
    method = args.method or "plugin"
    scn = fp.scenario
    y = fp.scenario.partition.outcome if fp.scenario.partition is not None else scn.y
    pred = fp.predict(data)
    with np.errstate(divide="ignore"):
        report = {
            "method": method,
            "constraint_base": estimate(data, fp.nuis, scn, method).value,
            "constraint_fair": _constraint_of(fp, data, scn, method),
            "mse": float(np.mean((data[y] - pred) ** 2)) if y in data else None,
        }
    if y in data and fp.nuis.psi.family == "binomial":
        p = np.clip(pred, 1e-12, 1 - 1e-12)
        report["log_loss"] = float(-np.mean(data[y] * np.log(p) + (1 - data[y]) * np.log1p(-p)))
    _emit(report, _out_dir(args.out), "evaluation.json")
    return EXIT_OK


def _constraint_of(fp, data, scn, method):
    # weighted estimators see the predictor through the outcome column
    outcome = fp.predict(data) if method in ("ipw", "aipw") else None
    predictor = None if method == "ipw" else fp.predict
    return estimate(data, fp.nuis, scn, method, predictor=predictor, outcome=outcome).value


def cmd_simulate(args) -> int:
    from .sim import SimPlan, run_plan, summarize

    plan = SimPlan.from_json(args.plan)
    if args.seed is not None:
        plan.seed = args.seed
    if args.threads is not None:
        plan.threads = args.threads
    if args.lambda_grid is not None:
        plan.lambda_grid = args.lambda_grid
    out = _out_dir(args.out) or "."
    res = run_plan(plan)
    o = res.oracle
    print(f"oracle theta={o.theta:.6f} sigma2={o.sigma2:.6f} "
          f"risk_psi0={o.risk_psi0:.6f} risk_star={o.risk_star:.6f}")
    res.to_csv(os.path.join(out, "result.csv"))
    if res.rows:
        summarize(res).to_csv(os.path.join(out, "summary.csv"))
    for f in res.failures:
        _err(f"cell failed: rep={f['rep']} n={f['n']}: {f['error']}")
    cells = len(plan.sample_sizes) * plan.replications
    ok = cells - len(res.failures)
    print(f"cells {ok}/{cells} succeeded")
    return EXIT_OK if ok >= 0.95 * cells else EXIT_NOT_IDENTIFIED


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pathfair", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check-id", help="identifiability and partition")
    c.add_argument("--graph", required=True)
    c.set_defaults(func=cmd_check_id)

    f = sub.add_parser("fit-adjust", help="fit and adjust a predictor")
    f.add_argument("--data", required=True)
    f.add_argument("--graph", required=True)
    f.add_argument("--config")
    f.add_argument("--out")
    f.add_argument("--method", choices=METHODS)
    f.add_argument("--risk", choices=("mse", "xent", "xent-odds"))
    f.add_argument("--bound", type=float)
    f.add_argument("--seed", type=int)
    f.add_argument("--clip-eps", dest="clip_eps", type=float)
    f.add_argument("--lambda-grid", dest="lambda_grid", type=int)
    f.add_argument("--allow-nonconverged", action="store_true")
    f.set_defaults(func=cmd_fit_adjust)

    r = sub.add_parser("predict", help="apply a saved predictor")
    r.add_argument("--predictor", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="constraint and risk of a saved predictor")
    e.add_argument("--predictor", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--method", choices=METHODS)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("simulate", help="run a simulation plan")
    s.add_argument("--plan", required=True)
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    s.add_argument("--lambda-grid", dest="lambda_grid", type=int)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except PathFairError as exc:
        _err(f"error: {type(exc).__name__}: {exc}")
        return exit_code(exc)
    except OSError as exc:
        _err(f"error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
