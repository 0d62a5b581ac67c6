"""Replica orchestration and statistics for the martingale moments.

``run_experiment`` simulates independent replicas (chunked, optionally
across worker processes), evaluates the martingale on each replica at a
time grid, and aggregates means, standard errors and q-th moments of the
HS norm.  Replica seeds are derived by the documented 64-bit mix from
the master seed, and the reduction order is fixed, so a plan's output is
bit-reproducible regardless of chunking or worker count.

Tail handling is two-pass per chunk: a pilot simulation out to the
horizon provides the realized parents, the smallest per-replica cutoffs
meeting the tail tolerance are computed from closed-form tail integrals,
and the final simulation extends the pilot (draws are prefix-stable, so
the pilot tree is reproduced verbatim and only children beyond the
horizon are appended).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionError, ConvergenceError, PopulationCapError, UsageError
from .kernels import hs_norm, spectral_radius
from .martingale import (
    choose_tail_cutoffs,
    eval_all_representations,
    eval_W_coming_gen_batch,
    expected_initial,
    max_pairwise_discrepancy,
)
from .models import OffspringModel, laplace_matrix
from .population import DEFAULT_CAP, extract_tree, simulate_batch
from .spectral import LaurentData, find_malthusian
from . import rng


@dataclass
class ExperimentPlan:
    model: OffspringModel
    laurent: LaurentData
    t_grid: tuple
    n_replicas: int
    master_seed: int
    q: float = 2.0
    tolerance: float = 1e-10
    tail_tolerance: float = 1e-6
    chunk_size: int = 200
    replica_offset: int = 0
    threads: int = 1
    population_cap: int = DEFAULT_CAP
    exclude_capped: bool = False

    def __post_init__(self):
        grid = tuple(float(t) for t in self.t_grid)
        if len(grid) == 0:
            raise UsageError("t_grid must be non-empty")
        if any(t < 0 for t in grid):
            raise UsageError("t_grid values must be nonnegative")
        if list(grid) != sorted(grid):
            raise UsageError("t_grid must be sorted")
        object.__setattr__(self, "t_grid", grid)
        if self.n_replicas < 100:
            raise UsageError("n_replicas must be at least 100")
        if not 1.0 < self.q <= 2.0:
            raise UsageError("q must lie in (1, 2]")
        if self.laurent.root.lam.real <= 0:
            raise UsageError("the selected root must have positive real part")


@dataclass
class MomentCurve:
    t_grid: tuple
    lam: complex
    q: float
    n_replicas: int
    mean: np.ndarray
    se_re: np.ndarray
    se_im: np.ndarray
    q_moment: np.ndarray
    q_moment_se: np.ndarray
    max_truncation: np.ndarray
    w_samples: np.ndarray
    qnorm_samples: np.ndarray
    excluded: tuple = field(default=())


def _chunk_worker(args):
    plan, r_start, r_stop = args
    return _run_chunk(plan, r_start, r_stop)


def _run_chunk(plan: ExperimentPlan, r_start: int, r_stop: int,
               audit: bool = False):
    """Simulate replicas [r_start, r_stop) and evaluate the martingale.

    Returns (w_values (n,T,k,p), bounds (n,T), excluded replica indices).
    """
    model = plan.model
    laurent = plan.laurent
    lam = laurent.root.lam
    k = laurent.root.order
    horizon = max(plan.t_grid)
    indices = list(range(r_start, r_stop))
    seeds = [rng.replica_seed(plan.master_seed, plan.replica_offset + r)
             for r in indices]
    try:
        batch, bounds_by_t, values_by_t = _simulate_and_eval(
            plan, seeds, horizon)
        excluded = ()
    except PopulationCapError:
        if not plan.exclude_capped:
            raise
        values_list, bounds_list, excluded = [], [], []
        for pos, seed in enumerate(seeds):
            try:
                _, b_t, v_t = _simulate_and_eval(plan, [seed], horizon)
                values_list.append(np.stack([v[0] for v in v_t]))
                bounds_list.append(np.array([b[0] for b in b_t]))
            except PopulationCapError:
                excluded.append(indices[pos])
        if not values_list:
            raise PopulationCapError(
                "every replica in the chunk exceeded the population cap")
        return np.stack(values_list), np.stack(bounds_list), tuple(excluded)

    n = len(seeds)
    n_t = len(plan.t_grid)
    p = model.p
    w = np.empty((n, n_t, k, p), dtype=np.complex128)
    bounds = np.empty((n, n_t))
    for ti in range(n_t):
        w[:, ti] = values_by_t[ti]
        bounds[:, ti] = bounds_by_t[ti]

    if audit:
        _audit_representations(plan, batch, laurent)
    return w, bounds, excluded


def _simulate_and_eval(plan, seeds, horizon):
    # Pilot pass: realized parents determine the cutoffs needed for the
    # tail tolerance; the final pass extends the same draws.
    pilot = simulate_batch(plan.model, horizon, horizon, seeds,
                           cap=plan.population_cap)
    a_norm = hs_norm(plan.laurent.stacked)
    cutoffs = choose_tail_cutoffs(
        plan.model, plan.laurent.root.lam, plan.laurent.root.order, a_norm,
        horizon, pilot.ind_time, pilot.ind_type, pilot.ind_replica,
        len(seeds), plan.tail_tolerance)
    batch = simulate_batch(
        plan.model, horizon, cutoffs, seeds, cap=plan.population_cap,
        expected_individuals=pilot.n_individuals + 8,
        expected_children=_predict_children(plan.model, pilot, cutoffs))
    parent_time = batch.ind_time[batch.child_parent]
    values_by_t, bounds_by_t = [], []
    for t in plan.t_grid:
        values, bounds = eval_W_coming_gen_batch(batch, plan.laurent, t,
                                                 parent_time=parent_time)
        if np.any(bounds > plan.tail_tolerance * (1 + 1e-9)):
            bad = int(np.argmax(bounds))
            raise ConvergenceError(
                f"replica bound {bounds[bad]} exceeds the tail tolerance "
                f"{plan.tail_tolerance} after cutoff selection")
        values_by_t.append(values)
        bounds_by_t.append(bounds)
    return batch, bounds_by_t, values_by_t


def _predict_children(model, pilot, cutoffs) -> int:
    """Pre-sizing hint for the final pass: expected sampled children given
    the pilot's individuals and the chosen cutoffs."""
    from .models import mean_count_batch

    windows = cutoffs[pilot.ind_replica] - pilot.ind_time
    total = 0.0
    for i in range(1, model.p + 1):
        sel = pilot.ind_type == i
        if not np.any(sel):
            continue
        for j in range(1, model.p + 1):
            spec = model.entry(i, j)
            if spec is not None:
                total += float(np.sum(mean_count_batch(spec, windows[sel])))
    return int(total * 1.1 + 10.0 * math.sqrt(total + 1.0) + 64)


def _audit_representations(plan, batch, laurent):
    tree = extract_tree(batch, 0)
    for t in plan.t_grid:
        vals = eval_all_representations(tree, laurent, t)
        disc = max_pairwise_discrepancy(vals)
        allowance = plan.tolerance + 2 * max(
            v.truncation_bound for v in vals.values())
        if disc > allowance:
            raise ConvergenceError(
                f"representations disagree by {disc} at t={t} "
                f"(allowed {allowance}); evaluation is inconsistent")


def run_experiment(plan: ExperimentPlan) -> MomentCurve:
    """Estimate the mean matrix and q-th HS-norm moment over the grid."""
    chunks = []
    r = 0
    while r < plan.n_replicas:
        chunks.append((r, min(r + plan.chunk_size, plan.n_replicas)))
        r = chunks[-1][1]

    results = []
    if plan.threads > 1:
        with ProcessPoolExecutor(max_workers=plan.threads) as pool:
            results = list(pool.map(_chunk_worker,
                                    [(plan, a, b) for a, b in chunks]))
    else:
        for pos, (a, b) in enumerate(chunks):
            results.append(_run_chunk(plan, a, b, audit=(pos == 0)))

    w = np.concatenate([res[0] for res in results], axis=0)
    bounds = np.concatenate([res[1] for res in results], axis=0)
    excluded = tuple(idx for res in results for idx in res[2])

    n = w.shape[0]
    mean = w.mean(axis=0)
    se_re = w.real.std(axis=0, ddof=1) / math.sqrt(n)
    se_im = w.imag.std(axis=0, ddof=1) / math.sqrt(n)
    qnorm = np.sum(np.abs(w) ** 2, axis=(2, 3)) ** (plan.q / 2.0)
    q_moment = qnorm.mean(axis=0)
    q_moment_se = qnorm.std(axis=0, ddof=1) / math.sqrt(n)
    return MomentCurve(
        t_grid=plan.t_grid, lam=plan.laurent.root.lam, q=plan.q,
        n_replicas=n, mean=mean, se_re=se_re, se_im=se_im,
        q_moment=q_moment, q_moment_se=q_moment_se,
        max_truncation=bounds.max(axis=0), w_samples=w,
        qnorm_samples=qnorm, excluded=excluded)


# ---------------------------------------------------------------------------
# Statistical summaries
# ---------------------------------------------------------------------------

def mean_identity_check(plan: ExperimentPlan, curve: MomentCurve,
                        sigmas: float = 3.0, allowed_fraction: float = 0.05) -> dict:
    """Componentwise comparison of the empirical means against the
    ancestor row block, with aggregate false-positive accounting."""
    if not isinstance(plan.model.ancestor, int):
        raise UsageError("the mean identity check needs a fixed ancestor type")
    target = expected_initial(plan.laurent, plan.model.ancestor, plan.model.p)
    checks = 0
    outside = 0
    worst = 0.0
    atol = 1e-12
    for ti in range(len(curve.t_grid)):
        for part, se in (("real", curve.se_re[ti]), ("imag", curve.se_im[ti])):
            diff = np.abs(getattr(curve.mean[ti] - target, part))
            z = diff / np.maximum(se, atol / sigmas)
            margin = sigmas * se + atol
            checks += diff.size
            outside += int(np.count_nonzero(diff > margin + curve.max_truncation[ti]))
            worst = max(worst, float(np.max(z)))
    frac = outside / checks if checks else 0.0
    return {
        "components_checked": checks,
        "outside_3se": outside,
        "fraction_outside": frac,
        "worst_z": worst,
        "pass": frac <= allowed_fraction,
        "target": target,
    }


def increment_mean_check(curve: MomentCurve, sigmas: float = 3.0,
                         allowed_fraction: float = 0.05) -> dict:
    """Means of W_t - W_s over all grid pairs s < t should vanish."""
    n = curve.w_samples.shape[0]
    checks = 0
    outside = 0
    worst = 0.0
    for si in range(len(curve.t_grid)):
        for ti in range(si + 1, len(curve.t_grid)):
            diff = curve.w_samples[:, ti] - curve.w_samples[:, si]
            for part in ("real", "imag"):
                vals = getattr(diff, part)
                mean = vals.mean(axis=0)
                se = vals.std(axis=0, ddof=1) / math.sqrt(n)
                allowance = (sigmas * se + 1e-12
                             + curve.max_truncation[ti] + curve.max_truncation[si])
                checks += mean.size
                outside += int(np.count_nonzero(np.abs(mean) > allowance))
                worst = max(worst, float(np.max(np.abs(mean) / np.maximum(se, 1e-12))))
    frac = outside / checks if checks else 0.0
    return {
        "pairs_checked": checks,
        "outside_3se": outside,
        "fraction_outside": frac,
        "worst_z": worst,
        "pass": frac <= allowed_fraction,
    }


def boundedness_diagnostic(curve: MomentCurve, growth_factor: float = 1.5,
                           plateau_ratio_limit: float = 0.25,
                           sigmas: float = 3.0) -> dict:
    """Plateau heuristics for the q-th moment over a finite grid.

    The moment sequence of an L^q-bounded martingale flattens: the last
    increment should be a small fraction of the first, with separated
    confidence bands.  Growth by more than ``growth_factor`` between the
    last two doubling times (with separated bands) flags apparent
    unboundedness.  A finite grid cannot prove boundedness; this is the
    observable surrogate.
    """
    if len(curve.t_grid) < 4:
        raise UsageError("the diagnostic needs at least 4 grid points")
    n = curve.qnorm_samples.shape[0]

    def paired(ti, si, scale=1.0):
        d = curve.qnorm_samples[:, ti] - scale * curve.qnorm_samples[:, si]
        return float(d.mean()), float(d.std(ddof=1) / math.sqrt(n))

    first_mean, first_se = paired(1, 0)
    last_mean, last_se = paired(len(curve.t_grid) - 1, len(curve.t_grid) - 2)
    ratio = last_mean / first_mean if first_mean != 0 else math.inf
    bands_separated = (last_mean + sigmas * last_se
                       < first_mean - sigmas * first_se)
    plateau = ratio <= plateau_ratio_limit and bands_separated

    doubling = [(si, ti) for si in range(len(curve.t_grid))
                for ti in range(len(curve.t_grid))
                if curve.t_grid[si] > 0
                and abs(curve.t_grid[ti] - 2 * curve.t_grid[si]) <= 1e-9]
    growth_flag = False
    growth_details = []
    for si, ti in doubling[-2:]:
        dmean, dse = paired(ti, si, scale=growth_factor)
        factor = (curve.q_moment[ti] / curve.q_moment[si]
                  if curve.q_moment[si] > 0 else math.inf)
        significant = dmean > sigmas * dse
        growth_details.append({
            "t": curve.t_grid[si], "t2": curve.t_grid[ti],
            "factor": float(factor), "significant": bool(significant),
        })
        if significant:
            growth_flag = True

    return {
        "q_moments": [float(v) for v in curve.q_moment],
        "q_moment_ses": [float(v) for v in curve.q_moment_se],
        "first_increment": (first_mean, first_se),
        "last_increment": (last_mean, last_se),
        "plateau_ratio": float(ratio),
        "bands_separated": bool(bands_separated),
        "plateau": bool(plateau),
        "growth_flag": bool(growth_flag),
        "growth_details": growth_details,
        "bounded": bool(plateau and not growth_flag),
    }


def geometric_series_check(model: OffspringModel, q: float, theta: float,
                           delta: float, tol: float = 1e-10,
                           max_terms: int = 100000) -> dict:
    """Mechanics of the discounted generation sums: at s = q (theta - delta)
    above the Malthusian parameter, the transform matrix is a contraction
    and its Neumann series applied to the all-ones column matches the
    resolvent."""
    s = q * (theta - delta)
    perron = find_malthusian(model)
    if s <= perron.alpha:
        raise AssumptionError(
            f"q (theta - delta) = {s} is not above the Malthusian parameter "
            f"{perron.alpha}")
    lmat = laplace_matrix(model, s).value.real
    rho, _ = spectral_radius(lmat)
    if rho >= 1.0:
        raise AssumptionError(f"spectral radius {rho} at {s} is not below 1")
    ones = np.ones((model.p, 1))
    direct = np.linalg.solve(np.eye(model.p) - lmat, ones)
    partial = ones.copy()
    term = ones.copy()
    n_terms = 0
    residual = float(np.max(np.abs(direct - partial)))
    while residual > tol and n_terms < max_terms:
        term = lmat @ term
        partial = partial + term
        n_terms += 1
        residual = float(np.max(np.abs(direct - partial)))
    return {
        "s": s,
        "alpha": perron.alpha,
        "rho": rho,
        "terms": n_terms,
        "residual": residual,
        "resolvent_applied": [float(v) for v in direct.ravel()],
        "pass": residual <= tol,
    }
