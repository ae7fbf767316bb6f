"""Command-line entry points.

Subcommands: generate, fit, expand, risk-identity, coverage, experiment,
rate-fit. Exit codes: 0 on success, 2 on invalid configuration or arguments,
3 when solves fail to converge (or an experiment exceeds its allowed failure
fraction).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import diagnostics, harness, model, solver
from .losses import curvature_matrix, get_loss
from .penalties import GroupPenalty, L1BallConstraint, L1Penalty

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3


def parse_penalty_spec(spec, p):
    """Penalty from a compact string: l1:<level>, l1ball:<radius>,
    group:<level>:<block size>."""
    parts = spec.split(":")
    kind = parts[0]
    try:
        if kind == "l1" and len(parts) == 2:
            return L1Penalty(float(parts[1]))
        if kind == "l1ball" and len(parts) == 2:
            return L1BallConstraint(float(parts[1]))
        if kind == "group" and len(parts) == 3:
            level, d = float(parts[1]), int(parts[2])
            if d < 1 or p % d != 0:
                raise ValueError(
                    "group size %d does not divide p = %d" % (d, p))
            return GroupPenalty(level,
                                model.GroupStructure.contiguous(p // d, d))
    except ValueError as exc:
        raise ValueError("bad penalty spec %r: %s" % (spec, exc)) from None
    raise ValueError(
        "bad penalty spec %r (expected l1:<level>, l1ball:<radius> "
        "or group:<level>:<block size>)" % (spec,))


def _loss_for(dataset):
    return get_loss("squared" if dataset.model_kind == "linear"
                    else "logistic")


def _solver_config(args):
    return solver.SolverConfig(kkt_tol=args.tol, max_iters=args.max_iters)


def _write_vector(path, vec):
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(vec, dtype="<f8").tobytes())


def _emit(obj, out_dir=None, name=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    print(text)
    if out_dir is not None and name is not None:
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write(text + "\n")


def _cmd_generate(args):
    cov = harness._parse_covariance(args.covariance, args.p)
    beta_star = model.flat_signal(args.p, args.s, args.amplitude)
    X = model.generate_design(cov, args.n, args.design, args.seed)
    if args.model == "linear":
        ds = model.generate_linear(X, beta_star, args.noise_sd, args.seed,
                                   covariance=cov, design_kind=args.design)
    else:
        ds = model.generate_logistic(X, beta_star, args.seed, covariance=cov,
                                     design_kind=args.design)
    model.save_dataset(ds, args.out)
    _emit({"out": args.out, "n": ds.n, "p": ds.p, "model": args.model,
           "seed": args.seed})
    return EXIT_OK


def _cmd_fit(args):
    ds = model.load_dataset(args.dataset)
    loss = _loss_for(ds)
    penalty = parse_penalty_spec(args.penalty, ds.p)
    result = solver.fit_penalized(ds, loss, penalty, _solver_config(args))
    os.makedirs(args.out, exist_ok=True)
    _write_vector(os.path.join(args.out, "solution.bin"), result.solution)
    meta = {
        "penalty": args.penalty, "loss": loss.kind,
        "objective": result.objective, "kkt_residual": result.kkt_residual,
        "iterations": result.iterations, "converged": result.converged,
        "nnz": int(np.count_nonzero(result.solution)),
        "vector": "solution.bin",
    }
    _emit(meta, args.out, "solution.json")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _require_truth(ds, what):
    if ds.beta_star is None or ds.covariance is None:
        raise ValueError(
            "%s needs a dataset saved with beta_star and covariance "
            "(use the generate subcommand)" % what)


def _cmd_expand(args):
    ds = model.load_dataset(args.dataset)
    _require_truth(ds, "expand")
    loss = _loss_for(ds)
    penalty = parse_penalty_spec(args.penalty, ds.p)
    curv = curvature_matrix(loss, ds.covariance, ds.beta_star,
                            ds.design_kind)
    result = solver.fit_expansion(ds, loss, curv, ds.beta_star, penalty,
                                  _solver_config(args))
    os.makedirs(args.out, exist_ok=True)
    _write_vector(os.path.join(args.out, "expansion.bin"), result.solution)
    meta = {
        "penalty": args.penalty, "loss": loss.kind,
        "objective": result.objective, "kkt_residual": result.kkt_residual,
        "iterations": result.iterations, "converged": result.converged,
        "nnz": int(np.count_nonzero(result.solution)),
        "vector": "expansion.bin",
    }
    _emit(meta, args.out, "expansion.json")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _cmd_risk_identity(args):
    ds = model.load_dataset(args.dataset)
    _require_truth(ds, "risk-identity")
    loss = _loss_for(ds)
    penalty = parse_penalty_spec(args.penalty, ds.p)
    cfg = _solver_config(args)
    est = solver.fit_penalized(ds, loss, penalty, cfg)
    curv = curvature_matrix(loss, ds.covariance, ds.beta_star,
                            ds.design_kind)
    exp = solver.fit_expansion(ds, loss, curv, ds.beta_star, penalty, cfg)
    report = diagnostics.risk_identity_check(ds, est.solution, exp.solution,
                                             penalty, args.n_mc, args.seed,
                                             t=args.t)
    payload = report.as_dict()
    payload["est_converged"] = est.converged
    payload["exp_converged"] = exp.converged
    out_dir = args.out
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    _emit(payload, out_dir, "risk_identity.json" if out_dir else None)
    if not (est.converged and exp.converged):
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_coverage(args):
    cfg = harness.ExperimentConfig(
        experiment_kind="coverage",
        grid=(harness.GridPoint(args.n, args.p, args.s),),
        loss_kind="squared", penalty_kind="l1_penalized",
        covariance=args.covariance, xi=args.xi,
        replications=args.replications, master_seed=args.seed,
        threads=args.threads, kkt_tol=args.tol, max_iters=args.max_iters,
        output_dir=args.out)
    summary = harness.run_experiment(cfg)
    _emit({"coverage": summary["points"][0].get("coverage"),
           "coverage_se": summary["points"][0].get("coverage_se"),
           "records": summary["records"], "failed": summary["failed"],
           "out": args.out})
    if summary["failed_fraction"] > cfg.max_fail_frac:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_experiment(args):
    with open(args.config) as fh:
        cfg = harness.parse_config(fh.read())
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.tol is not None:
        overrides["kkt_tol"] = args.tol
    if overrides:
        cfg = replace(cfg, **overrides)
    summary = harness.run_experiment(cfg)
    _emit({"out": cfg.output_dir, "records": summary["records"],
           "failed": summary["failed"],
           "failed_fraction": summary["failed_fraction"],
           "rate_fit": summary["rate_fit"]})
    if summary["failed_fraction"] > cfg.max_fail_frac:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_rate_fit(args):
    records = harness.load_records_csv(args.records)
    slope, intercept, stderr = harness.rate_fit(records, metric=args.metric)
    payload = {"metric": args.metric, "slope": slope,
               "intercept": intercept, "stderr": stderr}
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="penexp",
        description="Penalized regression, first-order expansions, and "
                    "simulation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_solver_flags(sp):
        sp.add_argument("--tol", type=float, default=1e-8,
                        help="KKT residual tolerance (default 1e-8)")
        sp.add_argument("--max-iters", type=int, default=20000)

    sp = sub.add_parser("generate", help="simulate a dataset and save it")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--s", type=int, required=True,
                    help="number of nonzero true coefficients")
    sp.add_argument("--model", choices=("linear", "logistic"),
                    default="linear")
    sp.add_argument("--design", choices=("gaussian", "rademacher"),
                    default="gaussian")
    sp.add_argument("--covariance", default="identity",
                    help="identity or ar1:<rho>")
    sp.add_argument("--noise-sd", type=float, default=1.0)
    sp.add_argument("--amplitude", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_generate)

    sp = sub.add_parser("fit", help="solve the penalized problem")
    sp.add_argument("dataset", help="directory written by generate")
    sp.add_argument("--penalty", required=True,
                    help="l1:<level>, l1ball:<radius>, group:<level>:<size>")
    add_solver_flags(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_fit)

    sp = sub.add_parser("expand",
                        help="solve the quadratic surrogate at the truth")
    sp.add_argument("dataset")
    sp.add_argument("--penalty", required=True)
    add_solver_flags(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_expand)

    sp = sub.add_parser("risk-identity",
                        help="check the estimation-error risk identity")
    sp.add_argument("dataset")
    sp.add_argument("--penalty", required=True)
    sp.add_argument("--n-mc", type=int, default=2000)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--t", type=float, default=2.0,
                    help="deviation parameter in the finite-sample bound")
    add_solver_flags(sp)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=_cmd_risk_identity)

    sp = sub.add_parser("coverage",
                        help="confidence-interval coverage experiment")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--s", type=int, required=True)
    sp.add_argument("--replications", type=int, default=500)
    sp.add_argument("--covariance", default="identity")
    sp.add_argument("--xi", type=float, default=0.5)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--threads", type=int, default=0,
                    help="0 means one worker per CPU core")
    add_solver_flags(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_coverage)

    sp = sub.add_parser("experiment", help="run a config-file experiment")
    sp.add_argument("config")
    sp.add_argument("--seed", type=int, default=None,
                    help="override master_seed from the config")
    sp.add_argument("--threads", type=int, default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--tol", type=float, default=None)
    sp.set_defaults(func=_cmd_experiment)

    sp = sub.add_parser("rate-fit",
                        help="log-log slope fit over a records.csv")
    sp.add_argument("records")
    sp.add_argument("--metric", default="gap")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=_cmd_rate_fit)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
