import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from compreg.baselines import (
    IlrPivotModel,
    LogitQmlModel,
    fit_ilr_pivot,
    fit_logit_qml,
    logit_gradient,
    logit_quasi_loglik,
    predict_ilr,
    predict_logit,
    _design,
)
from compreg.errors import BoundaryPoint, RankDeficient
from compreg.simgen import DgmSpec, get_truth, simulate
from compreg.simplex import CompositionDataset, ilr, is_composition

from conftest import compositions


class TestIlrPivot:
    def test_identity_data(self, rng):
        X = rng.dirichlet([2, 2, 2], 30)
        m = fit_ilr_pivot(CompositionDataset(X, X.copy()))
        np.testing.assert_allclose(m.coef[0, 0][0], 0, atol=1e-8)
        np.testing.assert_allclose(m.coef[0, 0][1:], np.eye(2), atol=1e-8)
        for l in range(3):
            assert m.headline[l, l] == pytest.approx(1, abs=1e-8)

    def test_constant_outcome(self, rng):
        c = np.array([0.2, 0.5, 0.3])
        X = rng.dirichlet([2, 2, 2, 2], 25)
        m = fit_ilr_pivot(CompositionDataset(X, np.tile(c, (25, 1))))
        np.testing.assert_allclose(m.coef[0, 0][0], ilr(c), atol=1e-8)
        np.testing.assert_allclose(m.coef[:, :, 1:], 0, atol=1e-8)

    def test_recovery_under_ilr_truth(self):
        truth = get_truth("ilr1")
        data = simulate(DgmSpec("ilr_normal", truth, N=1000), seed=11)
        m = fit_ilr_pivot(data)
        assert np.max(np.abs(m.coef[0, 0] - truth.params)) < 0.15

    def test_headline_invariant_to_trailing_order(self, rng):
        X = rng.dirichlet([2, 2, 2, 2], 40)
        Y = rng.dirichlet([2, 2, 2], 40)
        base = fit_ilr_pivot(CompositionDataset(X, Y)).headline
        for perm in ([0, 2, 1, 3], [0, 3, 2, 1], [0, 1, 3, 2]):
            other = fit_ilr_pivot(CompositionDataset(X[:, perm], Y)).headline
            assert other[0, 0] == pytest.approx(base[0, 0], abs=1e-10)
        for perm in ([0, 2, 1], [0, 1, 2]):
            other = fit_ilr_pivot(CompositionDataset(X, Y[:, perm])).headline
            assert other[0, 0] == pytest.approx(base[0, 0], abs=1e-10)

    def test_boundary(self, rng):
        X = rng.dirichlet([1, 1, 1], 10)
        X[0] = [0.5, 0.5, 0]
        with pytest.raises(BoundaryPoint):
            fit_ilr_pivot(CompositionDataset(X, rng.dirichlet([1, 1], 10)))

    def test_rank_deficient(self, rng):
        X = rng.dirichlet([1, 1, 1], 3)
        with pytest.raises(RankDeficient):
            fit_ilr_pivot(CompositionDataset(X, rng.dirichlet([1, 1], 3)))


class TestPredictIlr:
    def test_identity_data(self, rng):
        X = rng.dirichlet([2, 2, 2], 30)
        m = fit_ilr_pivot(CompositionDataset(X, X.copy()))
        np.testing.assert_allclose(predict_ilr(m, X), X, atol=1e-6)

    def _constant_model(self, c):
        coef = np.zeros((3, 3, 3, 2))
        coef[0, 0, 0] = ilr(c)
        return IlrPivotModel(coef, np.ones((3, 3, 2)), 10)

    def test_constant(self, rng):
        c = np.array([0.6, 0.3, 0.1])
        np.testing.assert_allclose(predict_ilr(self._constant_model(c), rng.dirichlet([1, 1, 1], 5)), np.tile(c, (5, 1)))

    def test_barycenter(self):
        m = IlrPivotModel(np.zeros((3, 3, 3, 2)), np.ones((3, 3, 2)), 10)
        np.testing.assert_allclose(predict_ilr(m, [1 / 3] * 3), [1 / 3] * 3)

    @given(compositions(3, min_part=1e-4), st.lists(st.floats(-10, 10), min_size=6, max_size=6))
    def test_valid_output(self, x, c):
        coef = np.broadcast_to(np.reshape(c, (3, 2)), (3, 3, 3, 2))
        m = IlrPivotModel(coef, np.ones((3, 3, 2)), 10)
        out = predict_ilr(m, x)
        assert is_composition(out)
        assert np.all(out >= 0)


class TestLogit:
    def test_constant_outcome(self, rng):
        c = np.array([0.2, 0.5, 0.3])
        X = rng.dirichlet([2, 2, 2], 30)
        m = fit_logit_qml(CompositionDataset(X, np.tile(c, (30, 1))))
        np.testing.assert_allclose(m.coef[0], np.log(c[:2] / c[2]), atol=1e-6)
        np.testing.assert_allclose(m.coef[1:], 0, atol=1e-6)

    def test_binary_matches_logistic_regression(self, rng):
        sm = pytest.importorskip("statsmodels.api")
        X = rng.dirichlet([2, 2, 2], 200)
        Z = _design(X)
        p = 1 / (1 + np.exp(-(Z @ [0.3, 1.0, -0.5])))
        yb = (rng.random(200) < p).astype(float)
        m = fit_logit_qml(CompositionDataset(X, np.column_stack([yb, 1 - yb])))
        ref = sm.Logit(yb, Z).fit(disp=0, method="newton", tol=1e-12)
        np.testing.assert_allclose(m.coef[:, 0], ref.params, atol=1e-6)

    def test_gradient_at_optimum(self, rng):
        d = CompositionDataset(rng.dirichlet([2, 2, 2], 80), rng.dirichlet([1, 1, 1, 1], 80))
        m = fit_logit_qml(d, tol=1e-8)
        assert m.converged
        assert np.linalg.norm(logit_gradient(m.coef, _design(d.X), d.Y)) < 1e-8

    def test_gradient_matches_finite_differences(self, rng):
        X = rng.dirichlet([2, 2, 2], 20)
        Y = rng.dirichlet([1, 1, 1], 20)
        Z = _design(X)
        coef = rng.normal(size=(3, 2))
        g = logit_gradient(coef, Z, Y)
        h = 1e-6
        for a in range(3):
            for k in range(2):
                e = np.zeros_like(coef)
                e[a, k] = h
                fd = (logit_quasi_loglik(coef + e, Z, Y) - logit_quasi_loglik(coef - e, Z, Y)) / (2 * h)
                assert g[a, k] == pytest.approx(fd, abs=1e-6)

    def test_improves_on_start(self, rng):
        d = CompositionDataset(rng.dirichlet([2, 2, 2], 50), rng.dirichlet([1, 1, 1], 50))
        m = fit_logit_qml(d)
        assert m.loglik >= logit_quasi_loglik(np.zeros((3, 2)), _design(d.X), d.Y)

    def test_zero_outcomes_allowed(self, rng):
        Y = rng.dirichlet([1, 1, 1], 40)
        Y[:5] = [1, 0, 0]
        m = fit_logit_qml(CompositionDataset(rng.dirichlet([2, 2, 2], 40), Y))
        assert m.converged

    def test_boundary_covariate(self, rng):
        X = rng.dirichlet([1, 1, 1], 10)
        X[3] = [0, 0.5, 0.5]
        with pytest.raises(BoundaryPoint):
            fit_logit_qml(CompositionDataset(X, rng.dirichlet([1, 1], 10)))


class TestPredictLogit:
    def test_zero_coefficients(self):
        m = LogitQmlModel(np.zeros((3, 3)))
        np.testing.assert_allclose(predict_logit(m, [0.2, 0.3, 0.5]), [0.25] * 4)

    def test_intercept_only(self, rng):
        c = np.array([0.1, 0.6, 0.3])
        coef = np.zeros((3, 2))
        coef[0] = np.log(c[:2] / c[2])
        np.testing.assert_allclose(predict_logit(LogitQmlModel(coef), rng.dirichlet([1, 1, 1], 4)), np.tile(c, (4, 1)))

    @given(compositions(3, min_part=1e-4), st.lists(st.floats(-20, 20), min_size=6, max_size=6))
    def test_strictly_positive(self, x, c):
        out = predict_logit(LogitQmlModel(np.array(c).reshape(3, 2)), x)
        assert np.all(out > 0)
        assert is_composition(out)
