"""Command-line driver: analyze, simulate, montecarlo, validate.

Exit codes: 0 success, 1 usage or parse error, 2 assumption failure,
3 numerical non-convergence (including truncation and population-cap
breaches), 4 strict-mode diagnostic failure.  All results are written as
JSON or CSV; errors go to stderr as one JSON object.  The environment
variable ``CMJ_LOG`` (debug/info/warning) controls log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import montecarlo as mc
from . import spectral
from .errors import (
    AssumptionError,
    CmjError,
    ConvergenceError,
    PopulationCapError,
    TruncationError,
    UsageError,
)
from .examples import example_model
from .kernels import exp_matrix, hs_norm, kronecker
from .martingale import (
    check_moment_condition,
    choose_tail_cutoffs,
    eval_all_representations,
    max_pairwise_discrepancy,
)
from .models import (
    atom_at_zero,
    empirical_laplace_check,
    load_model,
    model_to_json,
    validate_assumptions,
)
from .population import simulate, simulate_batch, extract_tree, tree_to_csv_rows
from .spectral import Region, check_primitive_case

log = logging.getLogger("cmjmart")

_EXIT_OK = 0
_EXIT_USAGE = 1
_EXIT_ASSUMPTION = 2
_EXIT_NUMERICAL = 3
_EXIT_STRICT = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _complex_pairs(mat) -> list:
    return [[[float(v.real), float(v.imag)] for v in row] for row in np.asarray(mat)]


def _parse_grid(text: str) -> tuple:
    try:
        values = tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise UsageError(f"bad grid {text!r}: {exc}") from exc
    if not values:
        raise UsageError("empty grid")
    return values

def _parse_region(text: str) -> Region:
    parts = text.split(",")
    if len(parts) != 4:
        raise UsageError("--region needs re0,re1,im0,im1")
    re0, re1, im0, im1 = (float(x) for x in parts)
    return Region(re0, re1, im0, im1)


def _parse_lambda(text: str) -> complex:
    parts = text.split(",")
    if len(parts) == 1:
        return complex(float(parts[0]), 0.0)
    if len(parts) == 2:
        return complex(float(parts[0]), float(parts[1]))
    raise UsageError("--lambda needs re or re,im")


def _load_model_arg(args):
    if getattr(args, "example", None):
        return example_model(args.example, rate=getattr(args, "rate", 1.0),
                             ancestor=getattr(args, "ancestor", 1))
    if getattr(args, "model", None):
        return load_model(args.model)
    raise UsageError("provide --model PATH or --example NAME")


def _write_json(path: str, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _analysis(model, region=None):
    report = validate_assumptions(model)
    if not report.a1_pass:
        raise AssumptionError(
            f"instantaneous-offspring radius {report.a1_rho} is not below 1")
    if not report.a2_pass:
        raise AssumptionError(f"no Malthusian parameter: {report.message}")
    return spectral.analyze(model, region)


def _select_root(analysis, lam_request):
    if lam_request is None:
        target = complex(analysis.perron.alpha, 0.0)
        tol = 1e-6
    else:
        target = lam_request
        tol = 1e-3
    best = None
    for data in analysis.laurent:
        dist = abs(data.root.lam - target)
        if best is None or dist < best[0]:
            best = (dist, data)
    if best is None or best[0] > tol:
        raise UsageError(
            f"no verified root within {tol} of {target} "
            f"(found {[d.root.lam for d in analysis.laurent]})")
    return best[1]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    model = _load_model_arg(args)
    region = _parse_region(args.region) if args.region else None
    assumptions = validate_assumptions(model)
    if not assumptions.a1_pass:
        raise AssumptionError(
            f"instantaneous-offspring radius {assumptions.a1_rho} is not below 1")
    if not assumptions.a2_pass:
        raise AssumptionError(f"no Malthusian parameter: {assumptions.message}")
    analysis = spectral.analyze(model, region)
    payload = analysis.to_json()
    payload["assumptions"] = {
        "a1_pass": assumptions.a1_pass, "a1_rho": assumptions.a1_rho,
        "a2_pass": assumptions.a2_pass, "alpha": assumptions.alpha,
    }
    alpha_data = _select_root(analysis, None)
    payload["primitive_case"] = _jsonable(
        check_primitive_case(model, analysis.perron, alpha_data))
    payload["model"] = model_to_json(model)
    _write_json(args.out, payload)
    log.info("wrote spectral report to %s", args.out)
    return _EXIT_OK


def cmd_simulate(args) -> int:
    model = _load_model_arg(args)
    analysis = _analysis(model)
    data = _select_root(analysis, _parse_lambda(args.lam) if args.lam else None)
    t_grid = _parse_grid(args.t_grid) if args.t_grid else (0.0, 1.0, 2.0)
    horizon = args.horizon if args.horizon is not None else max(t_grid)
    if max(t_grid) > horizon:
        raise UsageError("t_grid exceeds the horizon")

    pilot = simulate_batch(model, horizon, horizon, [args.seed])
    cutoffs = choose_tail_cutoffs(
        model, data.root.lam, data.root.order, hs_norm(data.stacked), horizon,
        pilot.ind_time, pilot.ind_type, pilot.ind_replica, 1, args.tail_tol)
    tree = extract_tree(
        simulate_batch(model, horizon, cutoffs, [args.seed]), 0)

    tree_path = args.out + ".tree.csv"
    with open(tree_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "parent_index", "child_rank", "type", "birth_time"])
        writer.writerows(tree_to_csv_rows(tree))

    records = []
    for t in t_grid:
        values = eval_all_representations(tree, data, t)
        records.append({
            "t": t,
            "lambda": {"re": data.root.lam.real, "im": data.root.lam.imag},
            "max_pairwise_discrepancy": max_pairwise_discrepancy(values),
            "representations": {
                rep_name: {
                    "value": _complex_pairs(mval.value),
                    "truncation_bound": mval.truncation_bound,
                }
                for rep_name, mval in values.items()
            },
        })
    payload = {
        "seed": args.seed, "horizon": horizon,
        "tail_cutoff": float(tree.tail_cutoff),
        "n_individuals": tree.n_individuals,
        "martingale": records,
    }
    _write_json(args.out + ".martingale.json", payload)
    log.info("wrote %s and %s", tree_path, args.out + ".martingale.json")
    return _EXIT_OK


def cmd_montecarlo(args) -> int:
    model = _load_model_arg(args)
    analysis = _analysis(model)
    data = _select_root(analysis, _parse_lambda(args.lam) if args.lam else None)
    t_grid = _parse_grid(args.t_grid) if args.t_grid else (0.0, 1.0, 2.0, 4.0)
    plan = mc.ExperimentPlan(
        model=model, laurent=data, t_grid=t_grid, n_replicas=args.replicas,
        master_seed=args.seed, q=args.q, tail_tolerance=args.tail_tol,
        threads=args.threads, chunk_size=args.chunk_size)
    curve = mc.run_experiment(plan)

    _write_curve_csv(args.out + ".curve.csv", curve)

    summary = {
        "plan": {
            "lambda": {"re": data.root.lam.real, "im": data.root.lam.imag},
            "order": data.root.order, "q": plan.q, "t_grid": list(plan.t_grid),
            "n_replicas": plan.n_replicas, "master_seed": plan.master_seed,
            "tail_tolerance": plan.tail_tolerance,
        },
        "alpha": analysis.perron.alpha,
        "excluded_replicas": list(curve.excluded),
    }
    checks = {}
    if isinstance(model.ancestor, int):
        mi = mc.mean_identity_check(plan, curve)
        mi["target"] = _complex_pairs(mi["target"])
        checks["mean_identity"] = mi
    checks["increment_means"] = mc.increment_mean_check(curve)
    if len(curve.t_grid) >= 4:
        checks["boundedness"] = mc.boundedness_diagnostic(curve)
    checks["moment_condition"] = check_moment_condition(
        model, data.root.lam, data.root.order, plan.q, 20000,
        seed=plan.master_seed, alpha=analysis.perron.alpha)
    summary["checks"] = _jsonable(checks)
    _write_json(args.out + ".summary.json", summary)
    log.info("wrote %s and %s", args.out + ".curve.csv", args.out + ".summary.json")

    if args.strict:
        flags = [c.get("pass", c.get("bounded", c.get("stable_under_doubling")))
                 for c in checks.values() if isinstance(c, dict)]
        if not all(bool(f) for f in flags):
            return _EXIT_STRICT
    return _EXIT_OK


def _write_curve_csv(path: str, curve):
    n_t = len(curve.t_grid)
    k, p = curve.mean.shape[1:]
    header = ["t"]
    for a in range(k):
        for b in range(p):
            header += [f"mean_re_{a}_{b}", f"mean_im_{a}_{b}",
                       f"se_re_{a}_{b}", f"se_im_{a}_{b}"]
    header += ["q_moment", "q_moment_se", "truncation_bound"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for ti in range(n_t):
            row = [repr(float(curve.t_grid[ti]))]
            for a in range(k):
                for b in range(p):
                    row += [repr(float(curve.mean[ti, a, b].real)),
                            repr(float(curve.mean[ti, a, b].imag)),
                            repr(float(curve.se_re[ti, a, b])),
                            repr(float(curve.se_im[ti, a, b]))]
            row += [repr(float(curve.q_moment[ti])),
                    repr(float(curve.q_moment_se[ti])),
                    repr(float(curve.max_truncation[ti]))]
            writer.writerow(row)


def cmd_validate(args) -> int:
    model = _load_model_arg(args)
    checks = []

    def record(name, passed, **extra):
        entry = {"name": name, "pass": bool(passed)}
        entry.update(_jsonable(extra))
        checks.append(entry)
        return passed

    kernels_ok, kernel_stats = _kernel_checks(seed=args.seed)
    record("matrix_kernels", kernels_ok, **kernel_stats)

    assumptions = validate_assumptions(model)
    record("assumption_a1", assumptions.a1_pass, rho=assumptions.a1_rho)
    record("assumption_a2", assumptions.a2_pass, alpha=assumptions.alpha,
           message=assumptions.message)
    overall_possible = assumptions.a1_pass and assumptions.a2_pass
    if not overall_possible:
        payload = {"checks": checks, "pass": False, "skipped": "assumption failure"}
        _write_json(args.out, payload)
        return _EXIT_STRICT if args.strict else _EXIT_OK

    lap = empirical_laplace_check(model, [0.5, 1.0, 2.0, 1.0 + 1.0j],
                                  n_samples=20000, seed=args.seed)
    record("laplace_mc_agreement", lap["pass"], worst_z=lap["worst_z"])

    analysis = spectral.analyze(model)
    worst_res = max((d.identity_residual for d in analysis.laurent), default=0.0)
    record("laurent_identities", worst_res <= 1e-8, residual=worst_res,
           roots=[{"re": d.root.lam.real, "im": d.root.lam.imag,
                   "order": d.root.order} for d in analysis.laurent])

    data = _select_root(analysis, None)
    worst_disc = 0.0
    horizon = 2.0
    for seed in range(args.seed, args.seed + 3):
        pilot = simulate_batch(model, horizon, horizon, [seed])
        cutoffs = choose_tail_cutoffs(
            model, data.root.lam, data.root.order, hs_norm(data.stacked),
            horizon, pilot.ind_time, pilot.ind_type, pilot.ind_replica, 1, 1e-8)
        tree = extract_tree(simulate_batch(model, horizon, cutoffs, [seed]), 0)
        for t in (0.0, 1.0, 2.0):
            values = eval_all_representations(tree, data, t)
            allowance = 1e-10 + 2 * max(v.truncation_bound for v in values.values())
            worst_disc = max(worst_disc, max_pairwise_discrepancy(values) - allowance)
    record("representation_equivalence", worst_disc <= 0.0,
           worst_excess=worst_disc)

    prim = check_primitive_case(model, analysis.perron, data)
    record("primitive_case", prim.get("pass", True),
           applicable=prim["applicable"],
           detail={k: v for k, v in prim.items() if k != "scalar"})

    geo = mc.geometric_series_check(model, 2.0, analysis.perron.alpha,
                                    0.1 * analysis.perron.alpha)
    record("geometric_series", geo["pass"], rho=geo["rho"], terms=geo["terms"],
           residual=geo["residual"])

    moment = check_moment_condition(model, data.root.lam, data.root.order,
                                    2.0, 20000, seed=args.seed,
                                    alpha=analysis.perron.alpha)
    record("moment_condition", moment["finite"] and moment["stable_under_doubling"],
           estimate=moment["estimate"], se=moment["standard_error"])

    overall = all(c["pass"] for c in checks)
    _write_json(args.out, {"checks": checks, "pass": overall})
    log.info("wrote validation report to %s", args.out)
    if args.strict and not overall:
        return _EXIT_STRICT
    return _EXIT_OK


def _kernel_checks(seed: int, cases: int = 200):
    rng_np = np.random.default_rng(seed)
    worst_kron = 0.0
    for _ in range(cases):
        a = rng_np.normal(size=(2, 3)) + 1j * rng_np.normal(size=(2, 3))
        b = rng_np.normal(size=(3, 2)) + 1j * rng_np.normal(size=(3, 2))
        c = rng_np.normal(size=(3, 2)) + 1j * rng_np.normal(size=(3, 2))
        d = rng_np.normal(size=(2, 3)) + 1j * rng_np.normal(size=(2, 3))
        lhs = kronecker(a, b) @ kronecker(c, d)
        rhs = kronecker(a @ c, b @ d)
        worst_kron = max(worst_kron, hs_norm(lhs - rhs) / max(1.0, hs_norm(rhs)))
    worst_exp = 0.0
    for _ in range(cases):
        lam = complex(rng_np.normal(), rng_np.normal())
        x, y = rng_np.uniform(-5, 5, size=2)
        k = int(rng_np.integers(1, 6))
        lhs = exp_matrix(lam, x, k) @ exp_matrix(lam, y, k)
        rhs = exp_matrix(lam, x + y, k)
        worst_exp = max(worst_exp, hs_norm(lhs - rhs) / max(1.0, hs_norm(rhs)))
    passed = worst_kron <= 1e-12 and worst_exp <= 1e-10
    return passed, {"kron_residual": worst_kron, "exp_residual": worst_exp}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="cmjmart", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_out=True):
        p.add_argument("--model", help="model JSON file")
        p.add_argument("--example", help="built-in example: 1, 2, nerman, full2, lattice")
        p.add_argument("--rate", type=float, default=1.0,
                       help="rate parameter for parametric examples")
        p.add_argument("--ancestor", type=int, default=1,
                       help="ancestor type for the built-in examples")
        p.add_argument("--seed", type=int, default=0)
        if with_out:
            p.add_argument("--out", required=True, help="output path (or prefix)")

    p = sub.add_parser("analyze", help="spectral report: Malthusian parameter, "
                                       "roots, coefficient matrices")
    common(p)
    p.add_argument("--region", help="root search rectangle re0,re1,im0,im1")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="single-path tree dump and martingale values")
    common(p)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--t-grid", dest="t_grid", help="comma-separated times")
    p.add_argument("--lambda", dest="lam", help="root selector re[,im]")
    p.add_argument("--tail-tol", dest="tail_tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("montecarlo", help="replica experiment: moment curve and summary")
    common(p)
    p.add_argument("--t-grid", dest="t_grid", help="comma-separated times")
    p.add_argument("--replicas", type=int, default=1000)
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--lambda", dest="lam", help="root selector re[,im]")
    p.add_argument("--tail-tol", dest="tail_tol", type=float, default=1e-6)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--chunk-size", dest="chunk_size", type=int, default=200)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("validate", help="full invariant suite on one model")
    common(p)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=getattr(logging, os.environ.get("CMJ_LOG", "WARNING").upper(),
                      logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _emit_error(exc)
        return _EXIT_USAGE
    except AssumptionError as exc:
        _emit_error(exc)
        return _EXIT_ASSUMPTION
    except (ConvergenceError, TruncationError, PopulationCapError) as exc:
        _emit_error(exc)
        return _EXIT_NUMERICAL
    except CmjError as exc:
        _emit_error(exc)
        return _EXIT_NUMERICAL


def _emit_error(exc: Exception):
    print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
          file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
