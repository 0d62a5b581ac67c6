import json
import math

import numpy as np
import pytest

from cmjmart import rng
from cmjmart.errors import DomainError, UsageError
from cmjmart.examples import example_model
from cmjmart.kernels import spectral_radius
from cmjmart.models import (
    BernoulliExp,
    FixedAtom,
    Poisson,
    Superposition,
    atom_at_zero,
    empirical_laplace_check,
    laplace_entry,
    laplace_matrix,
    load_model,
    make_model,
    model_from_json,
    model_to_json,
    sample_offspring,
    sample_offspring_batch,
    tail_integral,
    validate_assumptions,
)


class TestLaplace:
    def test_example1_at_two(self):
        le = laplace_matrix(example_model("1"), 2.0)
        np.testing.assert_allclose(le.value, [[0.5, 0.5], [0.0, 1.0 / 6.0]],
                                   rtol=1e-15)

    def test_example2_at_its_rate(self):
        for rate in (1.0, 2.0):
            le = laplace_matrix(example_model("2", rate=rate), rate)
            np.testing.assert_allclose(le.value, [[1.0, 1.0], [0.0, 1.0]],
                                       rtol=1e-15)

    def test_atom_at_zero_transform_is_constant(self):
        spec = FixedAtom(0.0, 1)
        for z in (0.5, 3.0 + 2.0j):
            assert laplace_entry(spec, z, 0) == 1.0
            for m in (1, 2, 3):
                assert laplace_entry(spec, z, m) == 0.0

    @pytest.mark.parametrize("spec", [
        Poisson(1.3),
        BernoulliExp(0.6, 2.0),
        FixedAtom(0.8, 2),
        Superposition((Poisson(0.5), FixedAtom(1.5, 1))),
    ])
    def test_derivatives_match_finite_differences(self, spec):
        h = 1e-5
        for z in (0.8, 1.7, 1.1 + 0.4j):
            for m in (1, 2, 3):
                f = lambda w: laplace_entry(spec, w, m - 1)
                approx = (f(z + h) - f(z - h)) / (2 * h)
                exact = laplace_entry(spec, z, m)
                assert abs(approx - exact) <= 1e-6 * max(1.0, abs(exact))

    def test_domain_violation_reports_entry(self):
        model = example_model("1")
        with pytest.raises(DomainError) as err:
            laplace_matrix(model, -0.5)
        assert "(1,1)" in str(err.value)
        with pytest.raises(DomainError):
            laplace_matrix(model, 0.0)  # boundary excluded

    def test_spectral_radius_monotone_in_theta(self):
        for name in ("1", "2", "full2", "lattice"):
            model = example_model(name)
            thetas = np.linspace(0.4, 6.0, 25)
            rhos = [spectral_radius(laplace_matrix(model, t).value.real)[0]
                    for t in thetas]
            assert all(a >= b - 1e-12 for a, b in zip(rhos, rhos[1:]))

    def test_transform_tends_to_instant_mass(self):
        # dominated convergence: at huge theta only atoms at zero survive
        for name in ("1", "2", "lattice"):
            model = example_model(name)
            val = laplace_matrix(model, 1e12).value.real
            np.testing.assert_allclose(val, atom_at_zero(model), atol=1e-8)


class TestAtoms:
    def test_example1_has_no_instant_mass(self):
        np.testing.assert_array_equal(atom_at_zero(example_model("1")),
                                      np.zeros((2, 2)))

    def test_example2_instant_child(self):
        np.testing.assert_array_equal(atom_at_zero(example_model("2")),
                                      [[0.0, 1.0], [0.0, 0.0]])

    def test_pure_atom_diagonal(self):
        model = make_model(1, {(1, 1): FixedAtom(0.0, 2)}, 1)
        np.testing.assert_array_equal(atom_at_zero(model), [[2.0]])


class TestValidation:
    def test_example1_passes(self):
        report = validate_assumptions(example_model("1"))
        assert report.a1_pass and report.a1_rho == 0.0
        assert report.a2_pass and abs(report.alpha - 1.0) < 1e-10

    def test_example2_passes_with_nilpotent_atoms(self):
        report = validate_assumptions(example_model("2", rate=2.0))
        assert report.a1_pass and report.a2_pass
        assert abs(report.alpha - 2.0) < 1e-10

    def test_subcritical_single_type_fails_a2(self):
        model = make_model(1, {(1, 1): BernoulliExp(0.5, 1.0)}, 1)
        report = validate_assumptions(model)
        assert report.a1_pass and not report.a2_pass

    def test_supercritical_instant_offspring_fails_a1(self):
        model = make_model(1, {(1, 1): FixedAtom(0.0, 2)}, 1)
        report = validate_assumptions(model)
        assert not report.a1_pass and report.a1_rho == 2.0


class TestSamplers:
    def test_fixed_atom_deterministic(self):
        got = sample_offspring(FixedAtom(1.0, 3), 2.0, rng.Stream(1))
        np.testing.assert_array_equal(got, [1.0, 1.0, 1.0])
        assert sample_offspring(FixedAtom(3.0, 1), 2.0, rng.Stream(1)).size == 0

    def test_bernoulli_probability_zero(self):
        assert sample_offspring(BernoulliExp(0.0, 1.0), 100.0, rng.Stream(5)).size == 0

    def test_poisson_empirical_mean(self):
        rate, horizon, n = 1.5, 4.0, 100_000
        keys = rng.combine_array(np.full(n, 77, np.uint64),
                                 np.arange(n, dtype=np.uint64))
        rows, _ = sample_offspring_batch(Poisson(rate), keys, np.full(n, horizon))
        counts = np.bincount(rows, minlength=n)
        se = counts.std(ddof=1) / math.sqrt(n)
        assert abs(counts.mean() - rate * horizon) <= 3 * se

    @pytest.mark.parametrize("spec", [
        Poisson(0.9),
        BernoulliExp(0.7, 2.0),
        FixedAtom(0.5, 2),
        Superposition((Poisson(0.5), BernoulliExp(0.3, 1.0), FixedAtom(1.0, 1))),
        Superposition((Superposition((Poisson(0.4),)), FixedAtom(0.2, 1))),
    ])
    def test_batch_reproduces_scalar_sampler(self, spec):
        keys = np.array([rng.combine(3, i) for i in range(60)], dtype=np.uint64)
        windows = np.linspace(0.2, 6.0, 60)
        rows, times = sample_offspring_batch(spec, keys, windows)
        for r in (0, 13, 59):
            scalar = sample_offspring(spec, windows[r], rng.Stream(int(keys[r])))
            np.testing.assert_array_equal(np.sort(times[rows == r]), np.sort(scalar))

    def test_window_extension_appends(self):
        spec = Superposition((Poisson(1.0), BernoulliExp(0.9, 1.0)))
        short = sample_offspring(spec, 3.0, rng.Stream(123))
        long = sample_offspring(spec, 9.0, rng.Stream(123))
        np.testing.assert_array_equal(short, np.sort(long[long <= 3.0]))

    def test_sampler_is_deterministic(self):
        spec = Poisson(2.0)
        a = sample_offspring(spec, 5.0, rng.Stream(9))
        b = sample_offspring(spec, 5.0, rng.Stream(9))
        np.testing.assert_array_equal(a, b)


class TestTailIntegrals:
    def test_poisson_unit_case(self):
        h = np.array([0.0, 1.0, 5.0])
        got = tail_integral(Poisson(1.0), 1.0, 1, h)
        np.testing.assert_allclose(got, 2.0 * np.exp(-h), rtol=1e-13)

    def test_zero_offset_matches_full_mass_quadrature(self):
        # independent oracle: numerical quadrature of the defining integral
        from scipy.integrate import quad
        theta, k = 0.7, 3
        for spec, density in [
            (Poisson(1.2), lambda s: 1.2),
            (BernoulliExp(0.6, 1.5), lambda s: 0.6 * 1.5 * math.exp(-1.5 * s)),
        ]:
            for h in (0.0, 0.5, 2.0):
                oracle, _ = quad(
                    lambda s: (1 + s ** (k - 1)) * math.exp(-theta * s) * density(s),
                    h, 60.0, limit=200)
                got = float(tail_integral(spec, theta, k, h))
                assert abs(got - oracle) <= 1e-9 * max(1.0, oracle)

    def test_atom_support_exhausted(self):
        assert float(tail_integral(FixedAtom(1.0, 4), 0.5, 2, 1.5)) == 0.0
        got = float(tail_integral(FixedAtom(1.0, 4), 0.5, 2, 0.5))
        assert abs(got - 4 * 2.0 * math.exp(-0.5)) <= 1e-12

    def test_requires_positive_theta(self):
        with pytest.raises(UsageError):
            tail_integral(Poisson(1.0), 0.0, 1, 1.0)


class TestModelJson:
    def test_round_trip(self, tmp_path):
        model = example_model("1")
        doc = model_to_json(model)
        again = model_from_json(doc)
        assert again == model
        path = tmp_path / "model.json"
        path.write_text(json.dumps(doc))
        assert load_model(path) == model

    def test_superposition_round_trip(self):
        model = make_model(
            2,
            {(1, 2): Superposition((Poisson(0.5), FixedAtom(1.0, 2))),
             (2, 1): BernoulliExp(0.25, 2.0)},
            (0.5, 0.5))
        assert model_from_json(model_to_json(model)) == model

    def test_malformed_json_positions(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"p": 1, "entries": [}')
        with pytest.raises(UsageError) as err:
            load_model(path)
        assert "line 1" in str(err.value)

    def test_missing_fields_reported(self):
        with pytest.raises(UsageError):
            model_from_json({"p": 1, "entries": [{"from": 1, "to": 1}]})
        with pytest.raises(UsageError):
            model_from_json({"p": 1, "entries": []})

    def test_bad_ancestor_distribution(self):
        with pytest.raises(UsageError):
            make_model(2, {}, (0.7, 0.7))
        with pytest.raises(UsageError):
            make_model(2, {}, 3)


class TestEmpiricalTransforms:
    def test_catalog_agrees_with_analytic(self):
        model = make_model(
            2,
            {(1, 1): Poisson(1.0),
             (1, 2): FixedAtom(0.7, 2),
             (2, 1): BernoulliExp(0.6, 1.5),
             (2, 2): Superposition((Poisson(0.4), BernoulliExp(0.5, 1.0)))},
            1)
        report = empirical_laplace_check(
            model, [0.5, 1.0, 2.0, 1.0 + 1.0j], n_samples=100_000, seed=17)
        assert report["pass"], report["worst_z"]
