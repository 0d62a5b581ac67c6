import math

import numpy as np
import pytest
from scipy.integrate import quad

from cmjmart import martingale as mart
from cmjmart import population as pop
from cmjmart import rng, spectral
from cmjmart.errors import TruncationError, UsageError
from cmjmart.examples import example_model
from cmjmart.kernels import exp_matrix, hs_norm
from cmjmart.models import FixedAtom, Poisson, make_model, sample_offspring_batch
from cmjmart.spectral import CharacteristicRoot, LaurentData, Region


def analysis(name, region=None, **kwargs):
    model = example_model(name, **kwargs)
    return model, spectral.analyze(model, region)


def scalar_laurent(lam, value=1.0):
    """Hand-built single-type coefficient data (test-only bypass of the
    root pipeline)."""
    mat = np.array([[value]], dtype=np.complex128)
    return LaurentData(root=CharacteristicRoot(complex(lam), 1, 0.0),
                       coeffs=[mat], stacked=mat, identity_residual=0.0)


class TestRepresentations:
    def test_equivalence_across_models_and_seeds(self):
        cases = [
            ("1", Region(0.25, 2.0, -5.0, 5.0), 1),
            ("2", None, 1),
            ("nerman", None, 1),
        ]
        for name, region, _ in cases:
            model, rep = analysis(name, region)
            for data in rep.laurent:
                for seed in (0, 1, 2):
                    tree = pop.simulate(model, 3.0, 24.0, seed=seed)
                    for t in (0.0, 0.8, 1.5, 3.0):
                        values = mart.eval_all_representations(tree, data, t)
                        disc = mart.max_pairwise_discrepancy(values)
                        allowance = 1e-10 + 2 * max(
                            v.truncation_bound for v in values.values())
                        assert disc <= allowance, (name, seed, t, disc)

    def test_equivalence_at_exact_birth_times(self):
        # binary atom chain: every birth time is an integer, so the grid
        # hits the member-set boundaries exactly
        model = example_model("lattice")
        rep = spectral.analyze(model, Region(0.3, 1.2, -7.0, 7.0))
        tree = pop.simulate(model, 4.0, 10.0, seed=5)
        for data in rep.laurent:
            for t in (0.0, 1.0, 2.0, 3.0, 4.0):
                values = mart.eval_all_representations(tree, data, t)
                assert mart.max_pairwise_discrepancy(values) <= 1e-10

    def test_complex_root_lattice_martingale_is_constant_one(self):
        # deterministic tree: 2^n children at time n with weight
        # e^(-lam n) and residue 1, so every representation telescopes to 1
        model = example_model("lattice")
        rep = spectral.analyze(model, Region(0.3, 1.2, -7.0, 7.0))
        tree = pop.simulate(model, 6.0, 40.0, seed=9)
        for data in rep.laurent:
            for t in (0.0, 2.5, 6.0):
                v = mart.eval_W_coming_gen(tree, data, t)
                np.testing.assert_allclose(v.value, [[1.0]], atol=1e-9)

    def test_single_type_reduction(self):
        model, rep = analysis("nerman")
        data = rep.laurent[0]
        tree = pop.simulate(model, 4.0, 26.0, seed=17)
        cg = pop.coming_generation(tree, 2.0)
        direct = np.sum(np.exp(-data.root.lam * cg.times)) * data.coeffs[0]
        got = mart.eval_W_coming_gen(tree, data, 2.0)
        np.testing.assert_allclose(got.value, direct, rtol=1e-12)

    def test_requires_positive_real_part(self):
        model, rep = analysis("nerman")
        tree = pop.simulate(model, 1.0, 2.0, seed=0)
        bad = scalar_laurent(-0.2)
        with pytest.raises(UsageError):
            mart.eval_W_coming_gen(tree, bad, 0.5)

    def test_truncation_tolerance_enforced(self):
        model, rep = analysis("nerman")
        tree = pop.simulate(model, 4.0, 4.5, seed=3)
        with pytest.raises(TruncationError):
            mart.eval_W_coming_gen(tree, rep.laurent[0], 4.0, tol=1e-10)


class TestMeanIdentity:
    def test_w0_mean_matches_initial_block(self):
        # the martingale mean at every t equals the ancestor row block;
        # statistical check at t = 0 over many replicas
        model, rep = analysis("1", Region(0.25, 2.0, -5.0, 5.0))
        data = rep.laurent[0]
        n = 3000
        seeds = [rng.replica_seed(77, r) for r in range(n)]
        batch = pop.simulate_batch(model, 0.0, 22.0, seeds)
        values, bounds = mart.eval_W_coming_gen_batch(batch, data, 0.0)
        mean = values.mean(axis=0)
        se = values.real.std(axis=0, ddof=1) / math.sqrt(n)
        target = mart.expected_initial(data, 1, model.p)
        assert np.all(np.abs(mean.real - target.real)
                      <= 4.0 * se + 1e-12 + bounds.max())
        np.testing.assert_allclose(target, [[1.0, 4.0 / 3.0]], atol=1e-9)

    def test_degenerate_start_is_exactly_zero(self):
        model = example_model("1", ancestor=2)
        rep = spectral.analyze(example_model("1"), Region(0.25, 2.0, -5.0, 5.0))
        data = rep.laurent[0]
        for seed in range(12):
            tree = pop.simulate(model, 4.0, 20.0, seed=seed)
            for t in (0.0, 1.0, 2.5, 4.0):
                value = mart.eval_W_coming_gen(tree, data, t).value
                assert np.all(value == 0)


class TestIncrements:
    def test_empty_sample_is_negative_row_block(self):
        model, rep = analysis("1", Region(0.25, 2.0, -5.0, 5.0))
        data = rep.laurent[0]
        inc = mart.increment_matrix(np.empty(0), np.empty(0, dtype=int), 1,
                                    data, model.p)
        np.testing.assert_array_equal(
            inc.y, -mart.type_slices(data, model.p)[0])

    def test_single_instant_point_selects_row(self):
        model, rep = analysis("1", Region(0.25, 2.0, -5.0, 5.0))
        data = rep.laurent[0]
        inc = mart.increment_matrix(np.array([0.0]), np.array([2]), 1,
                                    data, model.p)
        np.testing.assert_allclose(inc.z, data.coeffs[0][1:2, :], atol=1e-14)

    def test_centered_increment_mean_vanishes(self):
        # E[Y] = 0: Monte Carlo over fresh offspring draws of a type-1
        # parent in the double-pole model at its root
        model, rep = analysis("2", rate=1.0)
        data = rep.laurent[0]
        k, p = data.root.order, model.p
        n = 100_000
        horizon = 26.0
        slices = mart.type_slices(data, p)
        G = np.zeros((n, p, k), dtype=np.complex128)
        for j in (1, 2):
            spec = model.entry(1, j)
            keys = rng.combine_array(np.full(n, rng.combine(5, j), np.uint64),
                                     np.arange(n, dtype=np.uint64))
            rows, pts = sample_offspring_batch(spec, keys, np.full(n, horizon))
            G += mart._profile_sums(-pts, np.full(pts.size, j, dtype=np.int16),
                                    data.root.lam, k, p, groups=rows, n_groups=n)
        z = mart._assemble(G, slices)
        y = z - slices[0][None, :, :]
        mean = y.mean(axis=0)
        se = y.real.std(axis=0, ddof=1) / math.sqrt(n)
        tail = mart.tail_bound(model, data.root.lam, k, horizon)
        assert np.all(np.abs(mean.real) <= 4.0 * se + float(tail) + 1e-12)
        # and E[Z] matches the type-1 row block
        mean_z = z.mean(axis=0)
        assert np.all(np.abs(mean_z.real - slices[0].real)
                      <= 4.0 * se + float(tail) + 1e-12)


class TestCharacteristicScore:
    def test_one_atom_closed_form(self):
        # single parent whose only child arrives at a fixed age d: for
        # t < d the score is exp(lam, t-d) applied to the coefficient row
        model = make_model(1, {(1, 1): FixedAtom(2.0, 1)}, 1)
        data = scalar_laurent(0.3)
        tree = pop.simulate(model, 1.0, 5.0, seed=0)
        t = 1.0
        got = mart.eval_W_characteristic(tree, data, t)
        hand = (exp_matrix(0.3, -t, 1) @ exp_matrix(0.3, t - 2.0, 1)
                @ np.array([[1.0]]))
        np.testing.assert_allclose(got.value, hand, rtol=1e-12)
        coming = mart.eval_W_coming_gen(tree, data, t)
        np.testing.assert_allclose(coming.value, hand, rtol=1e-12)


class TestTailBounds:
    def test_poisson_closed_form(self):
        model = example_model("nerman")
        got = float(mart.tail_bound(model, 1.0, 1, 2.0))
        assert abs(got - 2.0 * math.exp(-2.0)) <= 1e-13

    def test_quadrature_oracle(self):
        model = example_model("1")
        theta, k = 0.8, 2
        dens = [
            (lambda s: 1.0), (lambda s: 1.0),
            (lambda s: 0.0), (lambda s: 0.5 * math.exp(-s)),
        ]
        for h in (0.0, 1.0, 3.0):
            oracle = sum(
                quad(lambda s, d=d: (1 + s ** (k - 1)) * math.exp(-theta * s) * d(s),
                     h, 80.0, limit=300)[0]
                for d in dens)
            got = float(mart.tail_bound(model, theta + 0.0j, k, h))
            assert abs(got - oracle) <= 1e-7 * max(1.0, oracle)

    def test_full_moment_at_zero_offset(self):
        model = example_model("nerman")
        got = float(mart.tail_bound(model, 1.0, 1, 0.0))
        assert abs(got - 2.0) <= 1e-13

    def test_atom_support_exhausted(self):
        model = example_model("lattice")
        assert float(mart.tail_bound(model, 1.0, 1, 1.5)) == 0.0

    def test_raising_cutoff_shrinks_bound_and_value_change(self):
        model, rep = analysis("1", Region(0.25, 2.0, -5.0, 5.0))
        data = rep.laurent[0]
        t = 2.0
        prev_bound = None
        prev_value = None
        for cutoff in (6.0, 9.0, 12.0, 18.0):
            tree = pop.simulate(model, 2.0, cutoff, seed=8)
            val = mart.eval_W_coming_gen(tree, data, t)
            if prev_bound is not None:
                assert val.truncation_bound < prev_bound
                assert hs_norm(val.value - prev_value) <= prev_bound
            prev_bound = val.truncation_bound
            prev_value = val.value

    def test_cutoff_selection_meets_tolerance(self):
        model, rep = analysis("1", Region(0.25, 2.0, -5.0, 5.0))
        data = rep.laurent[0]
        pilot = pop.simulate_batch(model, 3.0, 3.0, [4, 5])
        for tol in (1e-4, 1e-8):
            cutoffs = mart.choose_tail_cutoffs(
                model, data.root.lam, data.root.order, hs_norm(data.stacked),
                3.0, pilot.ind_time, pilot.ind_type, pilot.ind_replica, 2, tol)
            batch = pop.simulate_batch(model, 3.0, cutoffs, [4, 5])
            _, bounds = mart.eval_W_coming_gen_batch(batch, data, 3.0)
            assert np.all(bounds <= tol)


class TestMomentCondition:
    def test_fixed_atom_model_is_deterministic(self):
        model = example_model("lattice")
        rep = mart.check_moment_condition(model, complex(math.log(2.0)), 1,
                                          2.0, 500, seed=1)
        # two children at age 1, each weighted (1+1) e^(-theta)
        expected = (2 * 2.0 * math.exp(-math.log(2.0))) ** 2
        assert rep["standard_error"] == 0.0
        assert abs(rep["estimate"] - expected) <= 1e-12

    def test_example1_finite_and_stable(self):
        model = example_model("1")
        rep = mart.check_moment_condition(model, 1.0 + 0.0j, 1, 2.0, 40_000,
                                          seed=4, alpha=1.0)
        assert rep["finite"] and rep["stable_under_doubling"]
        assert rep["orderability"]  # Re(lambda) = 1 > alpha/q = 0.5

    def test_rejects_bad_q(self):
        with pytest.raises(UsageError):
            mart.check_moment_condition(example_model("1"), 1.0, 1, 1.0, 100, 0)
