import io

import numpy as np
import pytest

from fdepi import funreg
from fdepi.fdcore import trapezoid_weights
from fdepi.funreg import FunRegSpec, fit, loocv_r_squared, partial_r_squared, predict

from _synth import dataset, ff_regression


def _mini(seed, n=12, T=5):
    rng = np.random.default_rng(seed)
    names = [f"r{i}" for i in range(n)]
    return rng, names, dataset(rng.normal(size=(n, T)), names), dataset(rng.normal(size=(n, T)), names)


def _ols(design, Y):
    coef, *_ = np.linalg.lstsq(design, Y, rcond=None)
    return coef, design @ coef


class TestSaturatedOracle:
    @pytest.mark.parametrize("seed", range(3))
    def test_function_on_function(self, seed):
        _, _, x, y = _mini(seed)
        res = fit(FunRegSpec(y, {"x": x}, n_basis=5), lambdas=0.0)
        w = trapezoid_weights(5)
        coef, fitted = _ols(np.column_stack([np.ones(12), x.values * w]), y.values)
        np.testing.assert_allclose(res.fitted, fitted, atol=1e-6)
        np.testing.assert_allclose(res.surfaces["x"], coef[1:], atol=1e-6)
        np.testing.assert_allclose(res.intercept, coef[0], atol=1e-6)

    def test_function_on_scalar(self):
        rng, names, _, y = _mini(4)
        z = rng.normal(size=12)
        res = fit(FunRegSpec(y, scalar_covariates={"z": z}, n_basis=5), lambdas=0.0)
        coef, fitted = _ols(np.column_stack([np.ones(12), z]), y.values)
        np.testing.assert_allclose(res.fitted, fitted, atol=1e-6)
        np.testing.assert_allclose(res.curves["z"], coef[1], atol=1e-6)

    def test_per_group_intercepts(self):
        rng, names, x, y = _mini(5, n=14)
        g = np.array([0] * 7 + [1] * 7)
        res = fit(FunRegSpec(y, {"x": x}, intercept_mode="per-group", groups=g, n_basis=5), lambdas=0.0)
        design = np.column_stack([g == 0, g == 1, x.values * trapezoid_weights(5)]).astype(float)
        coef, fitted = _ols(design, y.values)
        np.testing.assert_allclose(res.fitted, fitted, atol=1e-6)
        np.testing.assert_allclose(res.intercepts[1], coef[1], atol=1e-6)


def _ise(n, seed):
    x, y, beta = ff_regression(np.random.default_rng(seed), n)
    res = fit(FunRegSpec(y, {"x": x}))
    w = trapezoid_weights(65) / 64
    return float(w @ (res.surfaces["x"] - beta) ** 2 @ w)


class TestConsistency:
    def test_ise_decreases_with_n(self):
        ise = [np.mean([_ise(n, s) for s in range(3)]) for n in (20, 50, 200)]
        assert ise[0] > ise[1] > ise[2]

    def test_reml_recovers_surface(self):
        assert _ise(200, 9) < 0.1


@pytest.fixture(scope="module")
def two_term():
    rng = np.random.default_rng(3)
    x, y, _ = ff_regression(rng, 30, T=20)
    z = y.values.mean(axis=1) + rng.normal(0, 0.3, 30)
    return FunRegSpec(y, {"x": x}, {"z": z}, n_basis=8)


class TestMetrics:
    def test_r2_definition(self, two_term):
        res = fit(two_term, lambdas=1.0)
        Y, w = two_term.response.values, trapezoid_weights(20)
        ss_reg = np.sum((res.fitted - Y.mean(axis=0)) ** 2 @ w)
        ss_res = np.sum((Y - res.fitted) ** 2 @ w)
        assert res.r2 == pytest.approx(ss_reg / (ss_reg + ss_res), rel=1e-12)
        assert funreg.r_squared(res) == res.r2

    def test_predict_reproduces_fitted(self, two_term):
        res = fit(two_term, lambdas=1.0)
        np.testing.assert_allclose(predict(res, two_term), res.fitted, atol=1e-10)

    def test_loocv_by_hand(self, two_term):
        lam = 1.0
        Y = two_term.response.values
        pred = np.array([predict(fit(two_term.subset(np.delete(np.arange(30), i)), lam),
                                 two_term.subset([i]))[0] for i in range(30)])
        w = trapezoid_weights(20)
        expected = 1 - np.sum((Y - pred) ** 2 @ w) / np.sum((Y - Y.mean(axis=0)) ** 2 @ w)
        assert loocv_r_squared(two_term, lam) == pytest.approx(expected, rel=1e-10)
        assert loocv_r_squared(two_term, lam, n_jobs=3) == loocv_r_squared(two_term, lam)

    def test_partial_r2(self, two_term):
        full = fit(two_term, lambdas=1.0)
        red = fit(two_term.without("z"), lambdas=1.0)
        expected = (full.r2 - red.r2) / (1 - red.r2)
        assert partial_r_squared(two_term, "z", lambdas=1.0) == pytest.approx(expected, rel=1e-12)

    def test_metrics_bundle(self, two_term):
        m = funreg.metrics(two_term, lambdas=1.0)
        assert set(m.partial_r2) == {"x", "z"}
        assert m.loocv_r2 < m.r2 <= 1

    def test_lambda_selection_is_finite(self, two_term):
        res = fit(two_term)
        assert set(res.lambdas) == {"x:s", "x:t", "z"}
        assert all(np.isfinite(v) and v > 0 for v in res.lambdas.values())
        assert 0 < res.edf < 30 * 20


class TestOutputs:
    def test_sign_bands(self):
        rng = np.random.default_rng(0)
        names = [f"r{i}" for i in range(40)]
        z = rng.normal(size=40)
        t = np.linspace(0, 1, 15)
        Y = np.outer(z, 2 * np.sin(2 * np.pi * t)) + rng.normal(0, 0.1, (40, 15))
        res = fit(FunRegSpec(dataset(Y, names), scalar_covariates={"z": z}, n_basis=8))
        sign = funreg.effect_sign_bands(res, "z")
        assert sign[3] == 1 and sign[11] == -1
        with pytest.raises(KeyError):
            funreg.effect_sign_bands(res, "nope")
        buf = io.StringIO()
        res.write_curve_csv("z", buf)
        assert buf.getvalue().splitlines()[0] == "t,estimate,se,sign"

    def test_surface_csv(self, two_term):
        res = fit(two_term, lambdas=1.0)
        buf = io.StringIO()
        res.write_surface_csv("x", buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "s,t,estimate,se" and len(lines) == 1 + 400


class TestValidation:
    def test_grid_mismatch(self):
        _, names, x, y = _mini(0)
        with pytest.raises(ValueError, match="days"):
            FunRegSpec(y, {"x": dataset(np.zeros((12, 6)), names)})

    def test_region_mismatch(self):
        _, _, x, y = _mini(0)
        with pytest.raises(ValueError, match="different regions"):
            FunRegSpec(y, {"x": dataset(x.values)})

    def test_constant_covariate(self):
        _, _, _, y = _mini(0)
        with pytest.raises(ValueError, match="constant"):
            fit(FunRegSpec(y, scalar_covariates={"z": np.ones(12)}, n_basis=5), 1.0)

    def test_per_group_needs_groups(self):
        _, _, x, y = _mini(0)
        with pytest.raises(ValueError, match="group labels"):
            FunRegSpec(y, {"x": x}, intercept_mode="per-group")

    def test_negative_lambda(self):
        _, _, x, y = _mini(0)
        with pytest.raises(ValueError, match=">= 0"):
            fit(FunRegSpec(y, {"x": x}, n_basis=5), -1.0)

    def test_without_unknown(self):
        _, _, x, y = _mini(0)
        with pytest.raises(KeyError):
            FunRegSpec(y, {"x": x}).without("q")

    def test_rank_deficient(self):
        _, names, x, y = _mini(0)
        dup = {"a": x, "b": x}
        with pytest.raises(np.linalg.LinAlgError, match="rank-deficient"):
            fit(FunRegSpec(y, dup, n_basis=5), 0.0)
