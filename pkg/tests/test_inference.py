import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compreg.direct import fit, fit_batch, quasi_loglik
from compreg.errors import DegenerateInput, UnsupportedDimension
from compreg.inference import (
    bootstrap_rows,
    fit_null,
    lambda_statistic,
    loocv_predictions,
    null_loglik,
    null_matrix,
    peel_hull,
    permutation_test,
    point_in_polygon,
    polygon_area,
    region_coordinates,
    ternary_to_composition,
    ternary_xy,
)
from compreg.simgen import DgmSpec, get_truth, simulate
from compreg.simplex import CompositionDataset, is_composition

from conftest import compositions, random_dataset


class TestNull:
    def test_two_points(self):
        d = CompositionDataset(np.array([[1.0, 0], [0, 1.0]]), np.array([[1.0, 0], [0, 1.0]]))
        np.testing.assert_array_equal(fit_null(d), [0.5, 0.5])

    def test_constant(self, rng):
        c = np.array([0.125, 0.25, 0.625])
        d = CompositionDataset(rng.dirichlet([1, 1], 7), np.tile(c, (7, 1)))
        np.testing.assert_array_equal(fit_null(d), c)

    def test_two_ways(self, rng):
        for _ in range(20):
            d = random_dataset(rng, int(rng.integers(2, 100)), 3, 4, alpha=0.3)
            direct_formula = float(np.sum(d.Y * np.log(d.Y.mean(axis=0))))
            assert null_loglik(d) == pytest.approx(direct_formula, abs=1e-12)
            assert quasi_loglik(null_matrix(d), d) == pytest.approx(null_loglik(d), abs=1e-12)


class TestLambda:
    def test_constant_outcome(self, rng):
        d = CompositionDataset(rng.dirichlet([1, 1, 1], 30), np.tile([0.2, 0.3, 0.5], (30, 1)))
        assert lambda_statistic(d) == pytest.approx(0, abs=1e-10)

    def test_contingency_table(self):
        # counts [[10, 0], [0, 10]]: saturated fit is exact, pooled is 1/2 everywhere
        X = np.repeat(np.eye(2), 10, axis=0)
        d = CompositionDataset(X, X.copy())
        assert lambda_statistic(d) == pytest.approx(20 * math.log(2), abs=1e-8)

    def test_ordering(self):
        null = simulate(DgmSpec("dirichlet", get_truth("null"), N=500), seed=1)
        dep = simulate(DgmSpec("dirichlet", get_truth("B1"), N=500), seed=1)
        assert lambda_statistic(null) < 0.1 * lambda_statistic(dep)

    @settings(max_examples=40)
    @given(st.integers(0, 2**32 - 1), st.integers(5, 60), st.integers(2, 4), st.integers(2, 4))
    def test_nonnegative(self, seed, N, D_s, D_r):
        rng = np.random.default_rng(seed)
        d = random_dataset(rng, N, D_s, D_r, alpha=0.5)
        assert lambda_statistic(d) >= -1e-8

    def test_identity_permutation(self, rng):
        d = random_dataset(rng, 50)
        _, f, *_ = fit_batch(d.X[np.arange(50)][None], d.Y)
        assert f[0] - null_loglik(d) == lambda_statistic(d)

    def test_unknown_model(self, rng):
        with pytest.raises(ValueError):
            lambda_statistic(random_dataset(rng, 10), model="probit")


class TestPermutation:
    def test_strong_signal_gives_zero(self):
        d = simulate(DgmSpec("dirichlet", get_truth("B1"), N=100), seed=3)
        res = permutation_test(d, 200, seed=5)
        assert res.lambda_obs > res.lambda_perm.max()
        assert res.p_value == 0
        assert res.p_value_add_one == pytest.approx(1 / 201)

    def test_p_value_definition(self, rng):
        d = random_dataset(rng, 40)
        res = permutation_test(d, 150, seed=2)
        assert res.p_value == np.mean(res.lambda_perm >= res.lambda_obs)
        assert res.n_permutations == len(res.lambda_perm) == 150

    def test_matches_single_fits(self, rng):
        d = random_dataset(rng, 30)
        res = permutation_test(d, 5, seed=9)
        from compreg.inference import replicate_rngs

        perms = [r.permutation(30) for r in replicate_rngs(9, 5)]
        for b, p in enumerate(perms):
            expect = fit((d.X[p], d.Y)).final_objective - null_loglik(d)
            assert res.lambda_perm[b] == expect

    def test_deterministic(self, rng):
        d = random_dataset(rng, 40)
        a = permutation_test(d, 250, seed=17)
        b = permutation_test(d, 250, seed=17, n_jobs=3)
        np.testing.assert_array_equal(a.lambda_perm, b.lambda_perm)
        assert (a.p_value, a.lambda_obs, a.seed) == (b.p_value, b.lambda_obs, b.seed)

    def test_seed_recorded(self, rng):
        res = permutation_test(random_dataset(rng, 20), 10)
        again = permutation_test(random_dataset(np.random.default_rng(20240601), 20), 10, seed=res.seed)
        np.testing.assert_array_equal(res.lambda_perm, again.lambda_perm)

    @pytest.mark.parametrize("model", ["ilr", "logit"])
    def test_baseline_adapters(self, model):
        d = simulate(DgmSpec("dirichlet", get_truth("B1"), N=80), seed=4)
        res = permutation_test(d, 30, seed=1, model=model)
        assert res.model == model
        assert res.p_value == 0

    def test_bad_count(self, rng):
        with pytest.raises(ValueError):
            permutation_test(random_dataset(rng, 10), 0)

    @pytest.mark.slow
    def test_null_p_values_uniform(self):
        # 1000 null datasets, 100 permutations each
        truth = get_truth("null")
        p = np.array(
            [
                permutation_test(simulate(DgmSpec("dirichlet", truth, N=60), seed=(7, r)), 100, seed=r).p_value
                for r in range(1000)
            ]
        )
        for cut in (0.05, 0.10, 0.25):
            assert abs(np.mean(p < cut) - cut) <= 0.03


class TestBootstrap:
    def test_exact_linear_collapses(self, rng):
        B = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.2, 0.2, 0.6]])
        X = rng.dirichlet([2, 2, 2], 60)
        boot = bootstrap_rows(CompositionDataset(X, X @ B), R=30, seed=1, tol=1e-14, max_iter=200_000)
        assert np.max(np.abs(boot.replicates - boot.point_estimate)) < 1e-4

    def test_deterministic_and_thread_invariant(self, rng):
        d = random_dataset(rng, 40)
        a = bootstrap_rows(d, R=230, seed=3)
        b = bootstrap_rows(d, R=230, seed=3, n_jobs=2)
        np.testing.assert_array_equal(a.replicates, b.replicates)
        np.testing.assert_array_equal(a.kept_index, b.kept_index)

    def test_region_properties(self):
        d = simulate(DgmSpec("dirichlet", get_truth("B1"), N=100), seed=8)
        boot = bootstrap_rows(d, R=300, seed=2)
        assert boot.dropped_count == 0
        for j in range(3):
            poly = region_coordinates(boot, j)
            assert point_in_polygon(ternary_xy(boot.point_estimate[j]), poly)
            comp = ternary_to_composition(poly)
            assert all(is_composition(c) for c in comp)
            inside = np.mean([point_in_polygon(p, poly, atol=1e-12) for p in ternary_xy(boot.replicates[:, j])])
            assert inside >= 0.95

    def test_drops_starved_replicates(self, rng):
        X = rng.dirichlet([1, 1], 30)
        X = np.column_stack([X, np.zeros(30)])
        X[0] = [0.2, 0.2, 0.6]
        with pytest.warns(RuntimeWarning, match="dropped"):
            boot = bootstrap_rows(CompositionDataset(X, rng.dirichlet([1, 1, 1], 30)), R=100, seed=1)
        assert boot.dropped_count > 0
        assert len(boot.replicates) == 100 - boot.dropped_count

    def test_four_part_outcome(self, rng):
        boot = bootstrap_rows(random_dataset(rng, 30, 3, 4), R=20, seed=1)
        with pytest.raises(UnsupportedDimension):
            region_coordinates(boot, 0)

    @pytest.mark.slow
    def test_coverage(self):
        truth = get_truth("B1")
        hits = []
        for r in range(200):
            d = simulate(DgmSpec("dirichlet", truth, N=500), seed=(21, r))
            boot = bootstrap_rows(d, R=200, seed=r, tol=1e-8)
            for j in range(3):
                hits.append(point_in_polygon(ternary_xy(truth.params[j]), region_coordinates(boot, j), atol=1e-12))
        assert 0.90 <= np.mean(hits) <= 0.99


class TestHull:
    def test_identical(self):
        out = peel_hull(np.tile([0.3, 0.2], (50, 1)))
        np.testing.assert_array_equal(out, [[0.3, 0.2]])

    def test_collinear(self):
        pts = np.column_stack([np.linspace(0, 1, 20), np.linspace(0, 1, 20)])
        out = peel_hull(pts, 0.5)
        assert len(out) == 2
        assert polygon_area(out) == 0

    def test_square_with_centre(self):
        ring = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
        inner = np.random.default_rng(0).uniform(0.3, 0.7, (96, 2))
        pts = np.vstack([ring, inner])
        out = peel_hull(pts, 0.95)
        # the corners (4 of 100 points) are peeled, leaving >= 95 points
        assert polygon_area(out) < 0.2
        assert np.mean([point_in_polygon(p, out) for p in pts]) >= 0.95

    def test_never_below_level(self):
        pts = np.random.default_rng(1).normal(size=(500, 2))
        out = peel_hull(pts, 0.9)
        assert np.mean([point_in_polygon(p, out, atol=1e-12) for p in pts]) >= 0.9

    @given(compositions(3))
    def test_ternary_round_trip(self, z):
        np.testing.assert_allclose(ternary_to_composition(ternary_xy(z)), z, atol=1e-12)

    def test_corners(self):
        np.testing.assert_allclose(ternary_xy(np.eye(3)), [[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]])


class TestLoocv:
    def test_single_row(self):
        d = CompositionDataset(np.array([[0.5, 0.5]]), np.array([[0.2, 0.8]]))
        with pytest.raises(DegenerateInput):
            loocv_predictions(d)

    def test_matches_manual_refit(self, rng):
        d = random_dataset(rng, 12)
        pred, ok = loocv_predictions(d, "direct")
        assert ok.all()
        keep = np.arange(12) != 4
        np.testing.assert_array_equal(pred[4], d.X[4] @ fit(d.subset(keep)).B_hat)

    def test_baseline_failure_recorded(self, rng):
        Y = rng.dirichlet([2, 2, 2], 15)
        Y[3] = [0.5, 0.5, 0.0]
        pred, ok = loocv_predictions(CompositionDataset(rng.dirichlet([2, 2, 2], 15), Y), "ilr")
        # the zero outcome in row 3 breaks every fit that includes it
        assert ok.sum() == 1 and ok[3]
        assert np.isnan(pred[~ok]).all()
