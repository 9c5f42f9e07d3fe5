"""Command-line interface.

Every subcommand writes JSON or CSV to standard output.  Errors go to
standard error as one JSON object per line, and the exit status is 2 for
bad input or arguments and 3 when a statistical precondition fails.
The ``CASESENS_THREADS`` environment variable sets the worker count for
the frontier and simulation commands.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import pandas as pd

from . import __version__
from .bounds import SensitivityParams
from .errors import CaseSensError, DataError, ParameterError, StatisticalPreconditionError
from .frontier import GAMMA_MAX, TOL, frontier_curve, write_frontier_csv
from .inference import PValueBounds, broad_test, combined_test, narrow_test
from .matching import CovariateTable, MatchResult, balance_table, optimal_match, write_matches_csv
from .power import (
    FavorableModel,
    PowerSpec,
    design_sensitivity,
    design_sensitivity_numeric,
    expected_narrow_sets,
    favorable_condition_check,
    power_broad,
    power_narrow,
    required_sets,
)
from .simulation import SimConfig, power_sweep, simulate_power, table2_configs, write_power_table
from .study import read_study_csv, summarize

THREADS_ENV = "CASESENS_THREADS"


class UsageError(ParameterError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ParameterError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _theta_sense(s: str) -> str:
    return "upper_only" if s in ("upper", "upper_only") else s


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, allow_nan=False) + "\n")


# ---------------------------------------------------------------- analyze

def _pv_record(test, pv: PValueBounds, params: SensitivityParams, args) -> dict:
    return {
        "test": test,
        "gamma": params.gamma,
        "theta": params.theta if test != "broad" else 1.0,
        "theta_sense": params.theta_sense,
        "alternative": pv.alternative,
        "method": pv.method,
        "statistic": pv.statistic,
        "n_sets": pv.n_sets_used,
        "p_lower": pv.lower,
        "p_upper": pv.upper,
        "notes": list(pv.notes),
    }


def cmd_analyze(args):
    study = read_study_csv(args.data)
    params = SensitivityParams(args.gamma, args.theta, _theta_sense(args.theta_sense))
    if args.test == "broad":
        rec = _pv_record("broad", broad_test(study, params.gamma, args.alternative, args.method), params, args)
    elif args.test == "narrow":
        rec = _pv_record("narrow", narrow_test(study, params, args.alternative, args.method), params, args)
    else:
        res = combined_test(study, params, args.alternative, args.method)
        rec = {
            "test": "combined",
            "gamma": params.gamma,
            "theta": params.theta,
            "theta_sense": params.theta_sense,
            "alternative": res.broad.alternative,
            "method": res.broad.method,
            "p_broad_upper": res.p_broad_upper,
            "p_narrow_upper": res.p_narrow_upper,
            "bonferroni_p": res.bonferroni_p,
            "broad": _pv_record("broad", res.broad, params, args),
            "narrow": _pv_record("narrow", res.narrow, params, args),
        }
    _emit(rec)


def cmd_summary(args):
    _emit(summarize(read_study_csv(args.data)).to_dict())


def cmd_frontier(args):
    study = read_study_csv(args.data)
    pts = frontier_curve(study, args.alpha, args.theta_min, args.theta_max, args.step, args.method,
                         _theta_sense(args.theta_sense), args.gamma_max, args.tol, workers=_threads())
    if args.out:
        write_frontier_csv(pts, args.out)
    else:
        write_frontier_csv(pts, sys.stdout)
    censored = sorted({c for p in pts for c in p.censored})
    if censored:
        _warn_json("Censored", f"gamma_star reached the search ceiling {args.gamma_max} for: {', '.join(censored)}")


# ---------------------------------------------------------------- power

def _model(args, need_narrow=False) -> FavorableModel:
    if (args.eta_t is None) != (args.eta_c is None):
        raise UsageError("give both --eta-t and --eta-c or neither")
    if need_narrow and args.eta_t is None:
        raise UsageError("--eta-t and --eta-c are required here")
    return FavorableModel(args.pi, args.bt, args.bc, args.eta_t, args.eta_c, args.J)


def _model_dict(m: FavorableModel) -> dict:
    return {"pi": m.pi, "b_T": m.b_T, "b_C": m.b_C, "eta_T": m.eta_T, "eta_C": m.eta_C, "J": m.J}


def cmd_power(args):
    model = _model(args)
    spec = PowerSpec(model, args.I, args.gamma, args.theta, args.alpha)
    narrow = model.has_narrow
    _emit({
        "model": _model_dict(model),
        "gamma": spec.gamma,
        "theta": spec.theta,
        "alpha": spec.alpha,
        "I": spec.I,
        "power_broad": power_broad(spec),
        "power_narrow": power_narrow(spec) if narrow else None,
        "design_gamma_broad": design_sensitivity(model),
        "design_gamma_narrow": design_sensitivity(model, spec.theta, "narrow") if narrow else None,
        "expected_narrow_sets": expected_narrow_sets(model, spec.I) if narrow else None,
        "favorable_condition": favorable_condition_check(model, spec.theta) if narrow else None,
    })


def cmd_design(args):
    model = _model(args, need_narrow=args.definition == "narrow")
    theta = args.theta if args.definition == "narrow" else None
    fn = design_sensitivity_numeric if args.numeric else design_sensitivity
    _emit({
        "model": _model_dict(model),
        "definition": args.definition,
        "theta": theta,
        "method": "numeric" if args.numeric else "closed_form",
        "design_sensitivity": fn(model, theta, args.definition),
    })


def cmd_sample_size(args):
    model = _model(args, need_narrow=args.definition == "narrow")
    n = required_sets(model, args.gamma, args.theta, args.alpha, args.target, args.definition, args.rounding)
    _emit({
        "model": _model_dict(model),
        "definition": args.definition,
        "gamma": args.gamma,
        "theta": args.theta,
        "alpha": args.alpha,
        "target_power": args.target,
        "rounding": args.rounding,
        "required_sets": n,
    })


def cmd_simulate(args):
    workers = _threads()
    if args.table2:
        table = power_sweep(table2_configs(args.reps, args.seed, args.method), workers)
        write_power_table(table, args.out or sys.stdout)
        return
    for name in ("bt", "bc", "eta_t", "eta_c", "I"):
        if getattr(args, name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required unless --table2 is given")
    model = _model(args, need_narrow=True)
    cfg = SimConfig(model, args.I, args.reps, args.seed, args.alpha, args.gamma, args.theta,
                    args.method, _theta_sense(args.theta_sense))
    res = simulate_power(cfg, workers)
    rec = {
        "config": {"model": _model_dict(model), "I": cfg.I, "reps": cfg.reps, "seed": cfg.seed,
                   "alpha": cfg.alpha, "gamma": cfg.gamma, "theta": cfg.theta, "method": cfg.method,
                   "theta_sense": cfg.theta_sense},
        **res.to_dict(),
        "zero_narrow_policy": "counted as narrow non-rejection",
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, indent=2) + "\n")
    else:
        _emit(rec)


# ---------------------------------------------------------------- matching

def _split(s):
    return [c.strip() for c in s.split(",") if c.strip()] if s else []


def _covariate_table(args) -> CovariateTable:
    exact = _split(args.exact)
    covs = _split(args.covariates) or None
    id_dtype = {args.id_col: str}
    if args.data:
        if args.cases or args.referents:
            raise UsageError("use either --data or --cases/--referents")
        frame = pd.read_csv(args.data, dtype=id_dtype)
        return CovariateTable(frame, args.id_col, args.group_col, exact, covs)
    if not (args.cases and args.referents):
        raise UsageError("need --data, or both --cases and --referents")
    return CovariateTable.from_case_referent(pd.read_csv(args.cases, dtype=id_dtype),
                                             pd.read_csv(args.referents, dtype=id_dtype),
                                             group_col=args.group_col, id_col=args.id_col,
                                             exact_keys=exact, covariates=covs)


def _write_balance(bal: pd.DataFrame, dest):
    bal.to_csv(dest, index=False, float_format="%.6f", lineterminator="\n")


def cmd_match(args):
    table = _covariate_table(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = optimal_match(table, args.k)
    for w in caught:
        _warn_json(type(w.message).__name__, str(w.message))
    write_matches_csv(res, args.out or sys.stdout)
    if args.balance_out and res.sets:
        _write_balance(balance_table(table, res), args.balance_out)


def _read_matches(path, k=None) -> MatchResult:
    df = pd.read_csv(path, dtype={"subject_id": str})
    need = {"set_id", "subject_id", "broad_case"}
    if not need <= set(df.columns):
        raise DataError(f"matches file needs columns {sorted(need)}")
    sets = {}
    for _, grp in df.groupby("set_id", sort=False):
        case = grp.loc[grp["broad_case"] == 1, "subject_id"].tolist()
        if len(case) != 1:
            raise DataError("each matched set needs exactly one case")
        sets[case[0]] = grp.loc[grp["broad_case"] == 0, "subject_id"].tolist()
    return MatchResult(sets, float("nan"), [], k or max(len(v) for v in sets.values()))


def cmd_balance(args):
    table = _covariate_table(args)
    res = _read_matches(args.matches)
    _write_balance(balance_table(table, res), args.out or sys.stdout)


# ---------------------------------------------------------------- parser

def _add_model(p, required=True):
    p.add_argument("--pi", type=float, default=1 / 3, help="exposure prevalence (default 1/3)")
    p.add_argument("--bt", type=float, required=required, help="broad-case probability if exposed")
    p.add_argument("--bc", type=float, required=required, help="broad-case probability if unexposed")
    p.add_argument("--eta-t", type=float, help="narrow share among exposed broad cases")
    p.add_argument("--eta-c", type=float, help="narrow share among unexposed broad cases")
    p.add_argument("--J", type=int, default=6, help="matched set size (default 6)")


def _add_sens(p, gamma_default=1.0):
    p.add_argument("--gamma", type=float, default=gamma_default)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--theta-sense", choices=["upper", "upper_only", "symmetric"], default="upper_only")


def _add_match_inputs(p):
    p.add_argument("--data", help="one CSV with a group column")
    p.add_argument("--cases", help="CSV of cases")
    p.add_argument("--referents", help="CSV of candidate referents")
    p.add_argument("--id-col", default="id")
    p.add_argument("--group-col", default="group")
    p.add_argument("--exact", default="", help="comma-separated exact-match columns")
    p.add_argument("--covariates", default="", help="comma-separated covariates (default: all others)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="casesens", description="Sensitivity analysis for matched case-referent studies.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="p-value bounds at (gamma, theta)")
    p.add_argument("--data", required=True)
    _add_sens(p)
    p.add_argument("--test", choices=["broad", "narrow", "combined"], default="combined")
    p.add_argument("--alternative", choices=["greater", "less", "two-sided"], default="greater")
    p.add_argument("--method", choices=["exact", "normal"], default="exact")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("summary", help="descriptive statistics of a study file")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("frontier", help="largest rejecting gamma over a theta grid (CSV)")
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--theta-min", type=float, default=1.0)
    p.add_argument("--theta-max", type=float, default=2.0)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--method", choices=["exact", "normal"], default="exact")
    p.add_argument("--theta-sense", choices=["upper", "upper_only", "symmetric"], default="upper_only")
    p.add_argument("--gamma-max", type=float, default=GAMMA_MAX)
    p.add_argument("--tol", type=float, default=TOL)
    p.add_argument("--out")
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("power", help="formula power under the favorable model")
    _add_model(p)
    p.add_argument("--I", type=float, required=True, help="number of broad-case matched sets")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("design-sensitivity", help="design sensitivity of the broad or narrow test")
    _add_model(p)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--definition", choices=["broad", "narrow"], default="broad")
    p.add_argument("--numeric", action="store_true", help="solve by bisection instead of the closed form")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("sample-size", help="matched sets needed for a target power")
    _add_model(p)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--target", type=float, default=0.80)
    p.add_argument("--definition", choices=["broad", "narrow"], default="broad")
    p.add_argument("--rounding", choices=["nearest", "ceil"], default="nearest")
    p.set_defaults(func=cmd_sample_size)

    p = sub.add_parser("simulate", help="Monte Carlo power of broad, narrow and combined tests")
    _add_model(p, required=False)
    p.add_argument("--I", type=int)
    _add_sens(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--reps", type=int, default=3000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--method", choices=["exact", "normal"], default="normal")
    p.add_argument("--table2", action="store_true", help="run the standard 54-row grid and write CSV")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("match", help="optimal 1-to-k matching within exact strata")
    _add_match_inputs(p)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--out", help="matched-sets CSV (default stdout)")
    p.add_argument("--balance-out", help="also write the balance table here")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("balance", help="covariate balance of a matched sample")
    _add_match_inputs(p)
    p.add_argument("--matches", required=True, help="matched-sets CSV from the match command")
    p.add_argument("--out")
    p.set_defaults(func=cmd_balance)
    return ap


def _warn_json(kind, message):
    sys.stderr.write(json.dumps({"level": "warning", "type": kind, "message": message}) + "\n")


def _error_json(err, code):
    sys.stderr.write(json.dumps({"level": "error", "type": type(err).__name__,
                                 "message": str(err), "exit_status": code}) + "\n")


def exit_status(err: BaseException) -> int:
    if isinstance(err, StatisticalPreconditionError):
        return 3
    if isinstance(err, (DataError, ParameterError, OSError, ValueError)):
        return 2
    return 1


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except (CaseSensError, OSError, ValueError) as err:
        code = exit_status(err)
        _error_json(err, code)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
