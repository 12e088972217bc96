"""Command-line surface: fit, test, predict, simulate, power, plotdata.

Exit codes: 0 on success, 2 for input/parse errors, 3 for numerical
failures.  All numeric console output uses 6 significant digits; file
payloads keep full precision.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import data_io
from .data_io import RunConfig
from .exceptions import IfrError, ParseError
from .index_fit import (
    DirectionParam,
    FitConfig,
    IfrFit,
    _vn_eval,
    fit_ifr,
    predict,
    sample_directions,
)
from .inference import (
    bootstrap_lambda,
    chi_square_sf,
    confidence_region,
    stepwise_selection,
    wald_test,
)
from .metric_spaces import MetricSpaceKind, ObjectSet, make_object, stack_objects
from .simulation import (
    SimSpec,
    generate_dataset,
    rmpe,
    run_mc_study,
    run_size_power_study,
)


def _g(x) -> str:
    return format(float(x), ".6g")


# ---------------------------------------------------------------------------
# Configuration plumbing
# ---------------------------------------------------------------------------


def _add_common_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=str, help="flat key = value configuration file")
    parser.add_argument("--seed", type=int, help="root random seed")
    parser.add_argument("--workers", type=int, help="parallel worker count")
    parser.add_argument("--metric", type=str,
                        choices=["wasserstein", "frobenius", "sphere", "euclidean"])
    parser.add_argument("--kernel", type=str, choices=["epanechnikov", "gaussian"])
    parser.add_argument("--directions", type=int, help="candidate direction count")
    parser.add_argument("--bootstrap-B", dest="bootstrap_b", type=int,
                        help="bootstrap replicate count")
    parser.add_argument("--tuning", type=str, choices=["cached", "per-direction"])
    parser.add_argument("--bandwidth-grid", type=str,
                        help="space-separated bandwidths (default: data-driven)")
    parser.add_argument("--bin-grid", type=str,
                        help="space-separated bin counts (default: one bin "
                             "per observation)")
    parser.add_argument("--no-refine", action="store_true",
                        help="skip the local direction polish")
    parser.add_argument("--sqrt-compositions", action="store_true",
                        help="sphere responses are raw compositions")
    parser.add_argument("--unit-diagonal", action="store_true",
                        help="matrix responses are correlation matrices")


def _build_run_config(args) -> RunConfig:
    values = data_io.read_config(args.config) if args.config else {}
    overrides = {
        "seed": args.seed,
        "workers": args.workers,
        "metric": args.metric,
        "kernel": args.kernel,
        "directions": args.directions,
        "bootstrap_b": args.bootstrap_b,
        "tuning": args.tuning,
    }
    if args.bandwidth_grid:
        overrides["bandwidth_grid"] = [float(x) for x in args.bandwidth_grid.split()]
    if args.bin_grid:
        overrides["bin_grid"] = [int(x) for x in args.bin_grid.split()]
    if args.no_refine:
        overrides["refine"] = False
    if args.sqrt_compositions:
        overrides["sqrt_compositions"] = True
    if args.unit_diagonal:
        overrides["unit_diagonal"] = True
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    return RunConfig(**values)


def _fit_config(run: RunConfig, directions: np.ndarray | None = None) -> FitConfig:
    return FitConfig(
        n_directions=run.directions,
        bandwidth_grid=None if run.bandwidth_grid is None else np.asarray(run.bandwidth_grid),
        bin_grid=run.bin_grid,
        refine=run.refine,
        tuning=run.tuning,
        kernel_family=data_io.kernel_family(run.kernel),
        seed=run.seed,
        directions=directions,
    )


def _load_dataset(run: RunConfig, predictors_path: str, responses_path: str):
    X = data_io.read_matrix_csv(predictors_path)
    kind = data_io.metric_kind(run.metric)
    objset = data_io.read_responses(
        responses_path, kind,
        sqrt_compositions=run.sqrt_compositions,
        unit_diagonal=run.unit_diagonal,
    )
    if X.shape[0] != len(objset):
        raise ParseError(
            f"{X.shape[0]} predictor rows but {len(objset)} responses")
    return X, objset, kind


# ---------------------------------------------------------------------------
# Fit payloads
# ---------------------------------------------------------------------------


def fit_to_payload(fit: IfrFit, run: RunConfig) -> dict:
    stages: dict[str, int] = {}
    for rec in fit.search_log:
        stages[rec.stage] = stages.get(rec.stage, 0) + 1
    return {
        "kind": "fit",
        "metric": fit.kind.value,
        "kernel": fit.kernel_family.value,
        "direction_full": fit.direction.full.tolist(),
        "direction_reduced": fit.direction.reduced.tolist(),
        "bandwidth": fit.bandwidth,
        "n_bins": fit.n_bins,
        "n_bins_effective": fit.bins.n_bins,
        "criterion": fit.criterion,
        "zero_variance": fit.zero_variance,
        "search_log_summary": {
            "n_evaluated": len(fit.search_log),
            "stages": stages,
            "best_criterion": fit.criterion,
        },
        "bin_edges": fit.bins.edges.tolist(),
        "rep_index": fit.bins.rep_index.tolist(),
        "rep_projection": fit.bins.rep_projection.tolist(),
        "fitted": data_io.objset_to_jsonable(
            _stack_fitted(fit)),
        "directions_grid": fit.directions.tolist(),
        "refine": fit.refine,
        "run_config": {"seed": run.seed, "tuning": run.tuning,
                       "directions": run.directions},
        "created_unix": time.time(),
    }


def _stack_fitted(fit: IfrFit) -> ObjectSet:
    return stack_objects(fit.fitted)


def fit_from_payload(payload: dict, X: np.ndarray, objset: ObjectSet) -> IfrFit:
    """Rebuild a fitted model from its payload and the original dataset."""
    kind = data_io.metric_kind(payload["metric"])
    if objset.kind is not kind:
        raise ParseError("dataset metric does not match the fit payload")
    direction = DirectionParam(np.asarray(payload["direction_full"], float))
    bandwidth = float(payload["bandwidth"])
    n_bins = int(payload["n_bins"])
    kf = data_io.kernel_family(payload["kernel"])
    criterion, fitted_values, bins = _vn_eval(X, objset, direction.full, bandwidth,
                                              n_bins, kf)
    if not np.isfinite(criterion):
        raise IfrError("stored fit cannot be re-evaluated on this dataset")
    fitted = [make_object(kind, v, probs=objset.probs,
                          unit_diagonal=objset.unit_diagonal) for v in fitted_values]
    return IfrFit(
        direction=direction,
        bandwidth=bandwidth,
        n_bins=n_bins,
        criterion=float(criterion),
        fitted=fitted,
        bins=bins,
        search_log=[],
        kind=kind,
        kernel_family=kf,
        directions=np.asarray(payload["directions_grid"], float),
        refine=bool(payload.get("refine", True)),
        zero_variance=bool(payload.get("zero_variance", False)),
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    run = _build_run_config(args)
    X, objset, kind = _load_dataset(run, args.predictors, args.responses)
    fit = fit_ifr(X, objset, kind, _fit_config(run))
    payload = fit_to_payload(fit, run)
    data_io.write_payload(args.out, payload)
    print("direction:", " ".join(_g(v) for v in fit.direction.full))
    print("bandwidth:", _g(fit.bandwidth))
    print("bins:", fit.n_bins, "(effective", str(fit.bins.n_bins) + ")")
    print("criterion:", _g(fit.criterion))
    print("wrote", args.out)
    return 0


def _parse_hypothesis(args, k: int):
    if args.hypothesis:
        spec = data_io.read_payload(args.hypothesis)
        if "B" not in spec:
            raise ParseError("hypothesis file needs a constraint matrix 'B'")
        B = np.asarray(spec["B"], dtype=float)
        zeta = np.asarray(spec.get("zeta", np.zeros(B.shape[0])), dtype=float)
        alpha = float(spec.get("alpha", args.alpha))
        return B, zeta, alpha
    # default: all trailing coordinates are zero
    return np.eye(k), np.zeros(k), args.alpha


def cmd_test(args) -> int:
    if args.tn is not None:
        if args.df is None:
            raise ParseError("--tn requires --df")
        p = chi_square_sf(args.tn, args.df)
        print(f"statistic: {_g(args.tn)}  df: {args.df}  p-value: {p:.3f}")
        if args.out:
            data_io.write_payload(args.out, {
                "kind": "test", "statistic": args.tn, "df": args.df,
                "p_value": p, "alpha": args.alpha, "reject": bool(p < args.alpha),
            })
        return 0
    if not args.predictors or not args.responses:
        raise ParseError("test needs --predictors and --responses")
    if not args.stepwise and not args.fit:
        raise ParseError("test needs --fit (or --stepwise / --tn)")
    run = _build_run_config(args)
    X, objset, kind = _load_dataset(run, args.predictors, args.responses)
    rng = np.random.default_rng(run.seed)
    if args.stepwise:
        steps = stepwise_selection(X, objset, kind, _fit_config(run),
                                   bootstrap_b=run.bootstrap_b,
                                   alpha_enter=args.alpha, rng=rng,
                                   n_workers=run.workers)
        payload = {"kind": "stepwise", "alpha_to_enter": args.alpha, "steps": [
            {"model": s["model"], "entered": s["entered"],
             "candidates": {str(j): c for j, c in s["candidates"].items()}}
            for s in steps]}
        if args.out:
            data_io.write_payload(args.out, payload)
        for i, s in enumerate(steps, start=1):
            print(f"step {i}: model columns {s['model']}")
            for j, c in sorted(s["candidates"].items()):
                if "p_value" in c:
                    print(f"  candidate {j}: coeff {_g(c['coefficient'])}"
                          f" p-value {_g(c['p_value'])}")
                else:
                    print(f"  candidate {j}: failed ({c['error']})")
            print("  entered:", s["entered"])
        return 0
    fit_payload = data_io.read_payload(args.fit)
    fit = fit_from_payload(fit_payload, X, objset)
    hyp = _parse_hypothesis(args, fit.direction.p - 1)
    B, zeta, alpha = hyp
    lam = bootstrap_lambda(X, objset, fit, run.bootstrap_b, rng,
                           n_workers=run.workers)
    result = wald_test(fit.direction.reduced, B, zeta, lam, fit.bins.n_bins, alpha)
    region = None
    try:
        region = confidence_region(fit.direction.reduced, lam, fit.bins.n_bins,
                                   gamma=alpha)
    except IfrError:
        pass
    payload = {
        "kind": "test",
        "statistic": result.statistic,
        "df": result.df,
        "p_value": result.p_value,
        "alpha": result.alpha,
        "reject": result.reject,
        "lambda": lam.tolist(),
        "n_bins": fit.bins.n_bins,
        "direction_reduced": fit.direction.reduced.tolist(),
        "bootstrap_b": run.bootstrap_b,
    }
    if region is not None:
        payload["region_threshold"] = region.threshold
        payload["region_level"] = region.level
    if args.out:
        data_io.write_payload(args.out, payload)
    print(f"statistic: {_g(result.statistic)}  df: {result.df}"
          f"  p-value: {result.p_value:.3f}  reject at {_g(alpha)}: {result.reject}")
    return 0


def cmd_predict(args) -> int:
    run = _build_run_config(args)
    X, objset, kind = _load_dataset(run, args.predictors, args.responses)
    X_new = data_io.read_matrix_csv(args.new)
    if X_new.size == 0:
        raise ParseError("empty prediction predictor file")
    fit = fit_from_payload(data_io.read_payload(args.fit), X, objset)
    import warnings as _warnings

    with _warnings.catch_warnings(record=True) as caught:
        _warnings.simplefilter("always")
        objects, mask = predict(fit, X_new, X, objset,
                                return_extrapolation_mask=True)
    pred_set = stack_objects(objects)
    data_io.write_responses(args.out, pred_set)
    for i in np.flatnonzero(mask):
        print(f"warning: row {i} extrapolates beyond the training range",
              file=sys.stderr)
    print("wrote", args.out)
    if args.truth:
        truth = data_io.read_responses(args.truth, kind,
                                       sqrt_compositions=run.sqrt_compositions,
                                       unit_diagonal=run.unit_diagonal)
        err = rmpe(objects, truth.to_list(), kind)
        print("rmpe:", _g(err))
    return 0


_SCENARIO_NAMES = {
    "dist1": "dist_setting_1",
    "dist2": "dist_setting_2",
    "adjacency": "adjacency",
    "euclidean": "euclidean",
}


def _build_sim_spec(args, run: RunConfig) -> SimSpec:
    scenario = _SCENARIO_NAMES.get(args.scenario, args.scenario)
    rng = np.random.default_rng(run.seed)
    if args.theta0:
        theta0 = DirectionParam(np.asarray([float(x) for x in args.theta0.split(",")]))
    else:
        theta0 = sample_directions(args.p, 1, rng)[0]
    link = args.link if args.link else ("expit" if scenario == "adjacency" else "identity")
    return SimSpec(scenario=scenario, n=args.n, theta0=theta0, link=link,
                   rho=args.rho)


def cmd_simulate(args) -> int:
    run = _build_run_config(args)
    spec = _build_sim_spec(args, run)
    if args.runs > 1:
        report = run_mc_study(spec, args.runs, seed=run.seed,
                              n_directions=run.directions,
                              compare_gfr=args.compare_gfr,
                              n_workers=run.workers)
        payload = {
            "kind": "mc_report",
            "scenario": spec.scenario,
            "link": spec.link,
            "n": spec.n,
            "runs": args.runs,
            "theta0": spec.theta0.full.tolist(),
            "bias": report.bias,
            "dev": report.dev,
            "msd_mean": float(np.mean(report.msd_values)),
            "msd_values": report.msd_values.tolist(),
            "n_failed": report.n_failed,
            "estimates": [e.full.tolist() for e in report.estimates],
        }
        if report.gfr_msd_values is not None:
            payload["gfr_msd_values"] = report.gfr_msd_values.tolist()
        if args.report:
            data_io.write_payload(args.report, payload)
        print(f"bias: {_g(report.bias)}  dev: {_g(report.dev)}"
              f"  mean MSD: {_g(np.mean(report.msd_values))}"
              f"  failed runs: {report.n_failed}")
        return 0
    out_dir = Path(args.out_dir if args.out_dir else ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(run.seed)
    X, objset = generate_dataset(spec, rng)
    data_io.write_matrix_csv(out_dir / "predictors.csv", X,
                             header=[f"x{j+1}" for j in range(spec.p)])
    data_io.write_responses(out_dir / "responses.csv", objset)
    data_io.write_payload(out_dir / "meta.json", {
        "kind": "sim_meta",
        "scenario": spec.scenario,
        "link": spec.link,
        "n": spec.n,
        "p": spec.p,
        "metric": spec.kind.value,
        "theta0": spec.theta0.full.tolist(),
        "seed": run.seed,
    })
    print("wrote", out_dir / "predictors.csv", "and", out_dir / "responses.csv")
    return 0


def cmd_power(args) -> int:
    run = _build_run_config(args)
    spec = _build_sim_spec(args, run)
    deltas = [float(x) for x in args.deltas.split(",")]
    table = run_size_power_study(spec, deltas, args.runs, args.alpha,
                                 bootstrap_b=run.bootstrap_b, seed=run.seed,
                                 n_directions=run.directions,
                                 n_workers=run.workers)
    payload = {
        "kind": "power",
        "deltas": table.deltas.tolist(),
        "rejection_rates": table.rejection_rates.tolist(),
        "n_effective": table.n_effective.tolist(),
        "alpha": table.alpha,
        "runs": args.runs,
        "scenario": spec.scenario,
        "n": spec.n,
        "p": spec.p,
    }
    if args.out:
        data_io.write_payload(args.out, payload)
    print("delta,power")
    for d, r in zip(table.deltas, table.rejection_rates):
        print(f"{_g(d)},{_g(r)}")
    return 0


def cmd_plotdata(args) -> int:
    payload = data_io.read_payload(getattr(args, "in"))
    if args.what == "power":
        if payload.get("kind") != "power":
            raise ParseError("payload is not a power table")
        rows = np.column_stack([payload["deltas"], payload["rejection_rates"]])
        data_io.write_matrix_csv(args.out, rows, header=["delta", "power"])
    elif args.what == "densities":
        if payload.get("kind") != "fit":
            raise ParseError("payload is not a fit result")
        fitted = data_io.objset_from_jsonable(payload["fitted"])
        if fitted.kind is not MetricSpaceKind.WASSERSTEIN2:
            raise ParseError("densities require distributional fits")
        rows = []
        probs = fitted.probs
        for i, q in enumerate(fitted.values):
            dq = np.maximum(np.diff(q), 1e-8)
            dens = np.diff(probs) / dq
            mids = (q[1:] + q[:-1]) / 2.0
            for v, f in zip(mids, dens):
                rows.append([float(i), float(v), float(f)])
        data_io.write_matrix_csv(args.out, np.asarray(rows),
                                 header=["object", "value", "density"])
    elif args.what == "ellipse":
        if "lambda" not in payload:
            raise ParseError("payload carries no covariance matrix")
        lam = np.asarray(payload["lambda"], dtype=float)
        center = np.asarray(payload["direction_reduced"], dtype=float)
        i, j = (int(x) for x in args.pair.split(","))
        sub = lam[np.ix_([i, j], [i, j])]
        region = confidence_region(center[[i, j]], sub, int(payload["n_bins"]),
                                   gamma=args.gamma)
        pts = region.ellipse_boundary(args.points)
        data_io.write_matrix_csv(args.out, pts, header=[f"theta{i+2}", f"theta{j+2}"])
    else:
        raise ParseError(f"unknown plotdata target {args.what!r}")
    print("wrote", args.out)
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ifr",
        description="Single-index regression for metric-space-valued responses",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="estimate the index direction")
    p_fit.add_argument("--predictors", required=True)
    p_fit.add_argument("--responses", required=True)
    p_fit.add_argument("--out", required=True)
    _add_common_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_test = sub.add_parser("test", help="Wald test for linear hypotheses")
    p_test.add_argument("--fit")
    p_test.add_argument("--predictors")
    p_test.add_argument("--responses")
    p_test.add_argument("--hypothesis", help="JSON file with B, zeta, alpha")
    p_test.add_argument("--alpha", type=float, default=0.05)
    p_test.add_argument("--stepwise", action="store_true")
    p_test.add_argument("--tn", type=float, help="report the p-value of a given statistic")
    p_test.add_argument("--df", type=int, help="degrees of freedom for --tn")
    p_test.add_argument("--out")
    _add_common_flags(p_test)
    p_test.set_defaults(func=cmd_test)

    p_pred = sub.add_parser("predict", help="predict responses at new predictors")
    p_pred.add_argument("--fit", required=True)
    p_pred.add_argument("--predictors", required=True)
    p_pred.add_argument("--responses", required=True)
    p_pred.add_argument("--new", required=True)
    p_pred.add_argument("--truth")
    p_pred.add_argument("--out", required=True)
    _add_common_flags(p_pred)
    p_pred.set_defaults(func=cmd_predict)

    p_sim = sub.add_parser("simulate", help="generate data or run a Monte Carlo study")
    p_sim.add_argument("--scenario", required=True,
                       choices=sorted(set(_SCENARIO_NAMES) | set(_SCENARIO_NAMES.values())))
    p_sim.add_argument("--link", choices=["identity", "square", "exponential", "expit"])
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--p", type=int, default=4)
    p_sim.add_argument("--theta0", help="comma-separated true direction")
    p_sim.add_argument("--rho", type=float, default=0.25)
    p_sim.add_argument("--runs", type=int, default=1)
    p_sim.add_argument("--out-dir")
    p_sim.add_argument("--report")
    p_sim.add_argument("--compare-gfr", action="store_true")
    _add_common_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_pow = sub.add_parser("power", help="empirical size and power of the Wald test")
    p_pow.add_argument("--scenario", default="euclidean",
                       choices=sorted(set(_SCENARIO_NAMES) | set(_SCENARIO_NAMES.values())))
    p_pow.add_argument("--link", choices=["identity", "square", "exponential", "expit"])
    p_pow.add_argument("--n", type=int, required=True)
    p_pow.add_argument("--p", type=int, default=4)
    p_pow.add_argument("--theta0", help="ignored; the delta grid sets the truth")
    p_pow.add_argument("--rho", type=float, default=0.25)
    p_pow.add_argument("--deltas", required=True, help="comma-separated deltas")
    p_pow.add_argument("--runs", type=int, required=True)
    p_pow.add_argument("--alpha", type=float, default=0.05)
    p_pow.add_argument("--out")
    _add_common_flags(p_pow)
    p_pow.set_defaults(func=cmd_power)

    p_plot = sub.add_parser("plotdata", help="emit plot-ready delimited tables")
    p_plot.add_argument("--in", required=True)
    p_plot.add_argument("--what", required=True,
                        choices=["densities", "power", "ellipse"])
    p_plot.add_argument("--pair", default="0,1", help="coordinate pair for ellipses")
    p_plot.add_argument("--gamma", type=float, default=0.05)
    p_plot.add_argument("--points", type=int, default=200)
    p_plot.add_argument("--out", required=True)
    _add_common_flags(p_plot)
    p_plot.set_defaults(func=cmd_plotdata)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except IfrError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
