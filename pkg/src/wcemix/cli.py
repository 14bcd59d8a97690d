"""Command-line frontend: fit, select, outliers, simulate.

CSV in (header row required), JSON and CSV out. Every random choice flows
from --seed (default 12345). Exit codes: 0 success, 1 runtime failure with a
machine-readable error JSON, 2 usage errors.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from .core import run_eee
from .exceptions import DataError, WcemixError
from .inference import sandwich_covariance
from .params import (ExpertComponent, FitConfig, GaussianParams,
                     MixtureParams, RegressionData, SkewNormalParams)
from .selection import detect_outliers, select_model
from .simulate import Scenario, run_study

DEFAULT_SEED = 12345

_MODEL_ALIASES = {
    "gmm": "gaussian", "gaussian": "gaussian",
    "moe": "experts", "experts": "experts",
    "snm": "skew_normal", "skew_normal": "skew_normal", "skewnormal": "skew_normal",
}


def read_csv_matrix(path):
    """Parse a numeric CSV with a header; report bad cells by row/column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        rows = []
        width = len(header)
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(
                    f"{path}: row {ln} has {len(row)} cells, expected {width}")
            vals = []
            for col, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {ln}, column {col!r}: "
                        f"non-numeric value {cell!r}") from None
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=np.float64)


def _load_data(args, family):
    header, mat = read_csv_matrix(args.input)
    if family != "experts":
        return mat
    if not args.response:
        raise DataError("experts models need --response naming the y column")
    if args.response not in header:
        raise DataError(f"response column {args.response!r} not in header")
    yi = header.index(args.response)
    y = mat[:, yi]
    x = np.delete(mat, yi, axis=1)
    design = np.column_stack([np.ones(len(y)), x])
    return RegressionData(design, y)


def _params_to_json(params: MixtureParams):
    comps = []
    for c in params.components:
        if isinstance(c, GaussianParams):
            comps.append({"mu": c.mu.tolist(), "sigma": c.sigma.tolist()})
        elif isinstance(c, SkewNormalParams):
            comps.append({"mu": c.mu.tolist(), "psi": c.psi.tolist(),
                          "sigma": c.sigma.tolist()})
        else:
            comps.append({"beta": c.beta.tolist(), "sigma2": c.sigma2,
                          "eta": None if c.eta is None else c.eta.tolist()})
    return {"family": params.family,
            "pi": None if params.pi is None else params.pi.tolist(),
            "components": comps}


def params_from_json(payload):
    """Rebuild MixtureParams from the JSON schema written by the CLI."""
    family = payload["family"]
    comps = []
    for c in payload["components"]:
        if family == "gaussian":
            comps.append(GaussianParams(np.asarray(c["mu"]),
                                        np.asarray(c["sigma"])))
        elif family == "skew_normal":
            comps.append(SkewNormalParams(np.asarray(c["mu"]),
                                          np.asarray(c["psi"]),
                                          np.asarray(c["sigma"])))
        else:
            eta = None if c["eta"] is None else np.asarray(c["eta"])
            comps.append(ExpertComponent(np.asarray(c["beta"]),
                                         c["sigma2"], eta))
    pi = None if payload["pi"] is None else np.asarray(payload["pi"])
    return MixtureParams(family, pi, comps)


def _emit(payload, output):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if output:
        with open(output, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _fit_config(args, gamma=None):
    return FitConfig(
        gamma=args.gamma if gamma is None else gamma,
        max_iter=args.max_iter, tol=args.tol, n_starts=args.starts,
        eigen_ratio_c=None if args.eigen_ratio_c == 0 else args.eigen_ratio_c,
        seed=args.seed, alpha=args.alpha, mc_draws=args.mc_draws)


def _fit_payload(fit, family, args, data):
    payload = {
        "schema": "wce/1",
        "command": "fit",
        "model": family,
        "gamma": fit.gamma,
        "seed": args.seed,
        "params": _params_to_json(fit.params),
        "labels": fit.labels.tolist(),
        "responsibilities": fit.responsibilities.tolist(),
        "outlier_flags": fit.outlier_flags.astype(bool).tolist(),
        "outlier_scores": fit.outlier_scores.tolist(),
        "trimmed_bic": fit.trimmed_bic,
        "iterations": fit.iterations,
        "converged": fit.converged,
    }
    if getattr(args, "se", False):
        est = sandwich_covariance(fit, data)
        payload["std_errors"] = dict(zip(est.param_layout,
                                         est.std_errors.tolist()))
    return payload


def _cmd_fit(args):
    family = _MODEL_ALIASES[args.model]
    data = _load_data(args, family)
    fit = run_eee(family, data, args.k, _fit_config(args))
    _emit(_fit_payload(fit, family, args, data), args.output)
    return 0


def _cmd_select(args):
    family = _MODEL_ALIASES[args.model]
    data = _load_data(args, family)
    k_grid = [int(v) for v in args.k_grid.split(",")]
    gamma_grid = [float(v) for v in args.gamma_grid.split(",")]
    res = select_model(data, family, k_grid, gamma_grid, _fit_config(args))
    payload = {
        "schema": "wce/1",
        "command": "select",
        "model": family,
        "seed": args.seed,
        "best_k": res.best_k,
        "best_gamma": res.best_gamma,
        "table": [{"k": c.k, "gamma": c.gamma, "trimmed_bic": c.trimmed_bic,
                   "converged": c.converged, "failed": c.failed,
                   "n_outliers": c.n_outliers} for c in res.table],
        "best_fit": _fit_payload(res.best_fit, family, args, data),
    }
    _emit(payload, args.output)
    return 0


def _cmd_outliers(args):
    family = _MODEL_ALIASES[args.model]
    data = _load_data(args, family)
    fit = run_eee(family, data, args.k, _fit_config(args))
    report = detect_outliers(fit, data, alpha=args.alpha,
                             r_draws=args.mc_draws, seed=args.seed)
    payload = {
        "schema": "wce/1",
        "command": "outliers",
        "model": family,
        "alpha": args.alpha,
        "seed": args.seed,
        "labels": fit.labels.tolist(),
        "scores": report.scores.tolist(),
        "flags": report.flags.astype(bool).tolist(),
        "n_flagged": int(report.flags.sum()),
    }
    _emit(payload, args.output)
    return 0


def _cmd_simulate(args):
    family = {"gaussian": "gaussian", "skewnormal": "skew_normal",
              "skew_normal": "skew_normal"}[args.scenario]
    scn = Scenario(family=family, xi=args.xi, omega=args.omega, p=args.p,
                   n=args.n, seed=args.seed)
    gammas = [float(v) for v in args.gammas.split(",")]
    methods = [(f"wce_gamma_{g:g}", _fit_config(args, gamma=g))
               for g in gammas]
    jobs = args.jobs or int(os.environ.get("WCEMIX_JOBS", "1"))
    report = run_study(scn, methods, n_reps=args.reps, parallelism=jobs)
    report.write_csv(args.output)
    if args.summary_json:
        report.write_json(args.summary_json)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wcemix",
        description="Robust mixture fitting via weighted complete "
                    "estimating equations")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_model=True):
        if with_model:
            p.add_argument("--model", choices=sorted(_MODEL_ALIASES),
                           default="gmm")
            p.add_argument("--input", required=True, help="input CSV path")
            p.add_argument("--response",
                           help="response column (experts only)")
        p.add_argument("--gamma", type=float, default=0.3)
        p.add_argument("--alpha", type=float, default=0.01)
        p.add_argument("--eigen-ratio-c", dest="eigen_ratio_c", type=float,
                       default=10.0, help="0 disables the constraint")
        p.add_argument("--starts", type=int, default=10)
        p.add_argument("--max-iter", dest="max_iter", type=int, default=1000)
        p.add_argument("--tol", type=float, default=1e-6)
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--mc-draws", dest="mc_draws", type=int, default=10_000)
        p.add_argument("--output", help="write the JSON result here "
                                        "(default: stdout)")

    p_fit = sub.add_parser("fit", help="fit one mixture model")
    common(p_fit)
    p_fit.add_argument("--k", type=int, required=True)
    p_fit.add_argument("--se", action="store_true",
                       help="include sandwich standard errors")

    p_sel = sub.add_parser("select", help="grid search over K and gamma")
    common(p_sel)
    p_sel.add_argument("--k-grid", dest="k_grid", required=True,
                       help="comma-separated component counts")
    p_sel.add_argument("--gamma-grid", dest="gamma_grid", required=True,
                       help="comma-separated gamma values")
    p_sel.add_argument("--se", action="store_true")

    p_out = sub.add_parser("outliers", help="fit and flag outliers")
    common(p_out)
    p_out.add_argument("--k", type=int, required=True)

    p_sim = sub.add_parser("simulate", help="run a replication study")
    common(p_sim, with_model=False)
    p_sim.add_argument("--scenario", choices=["gaussian", "skewnormal",
                                              "skew_normal"], required=True)
    p_sim.add_argument("--xi", type=float, default=2.0)
    p_sim.add_argument("--omega", type=float, default=0.0)
    p_sim.add_argument("--p", type=int, default=2)
    p_sim.add_argument("--n", type=int, default=500)
    p_sim.add_argument("--reps", type=int, default=100)
    p_sim.add_argument("--gammas", default="0,0.3",
                       help="comma-separated gamma values to compare")
    p_sim.add_argument("--jobs", type=int, default=0,
                       help="parallel replications (default WCEMIX_JOBS or 1)")
    p_sim.add_argument("--summary-json", dest="summary_json",
                       help="also write a JSON summary here")
    # simulate writes CSV, not JSON; require a target path
    for action in p_sim._actions:
        if action.dest == "output":
            action.required = True
            action.help = "write the per-replication CSV here"
    return parser


def run_command(argv):
    """Parse and execute; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    if getattr(args, "input", None) and not os.path.exists(args.input):
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(f"wcemix: error: input file not found: {args.input}\n")
        return 2
    handlers = {"fit": _cmd_fit, "select": _cmd_select,
                "outliers": _cmd_outliers, "simulate": _cmd_simulate}
    try:
        return handlers[args.command](args)
    except WcemixError as exc:
        error_payload = {"schema": "wce/1", "error": {
            "type": type(exc).__name__, "message": str(exc)}}
        out = getattr(args, "output", None)
        _emit(error_payload, out if args.command != "simulate" else None)
        return 1


def main():
    raise SystemExit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
