import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from mfe_predict.exceptions import InsufficientData, RankDeficient
from mfe_predict.poly import (
    PolynomialRegressor,
    PolynomialSpec,
    adjusted_r2,
    degree_diagnostic,
    design_matrix,
    enumerate_terms,
    error_percentage,
    fit_records,
    metrics,
)
from mfe_predict.records import InputVector, MfeRecord


def inclusion_exclusion_count(d, caps):
    """Tuples with sum <= d and j_i <= caps[i], counted combinatorially."""
    n = len(caps)
    total = 0
    for k in range(n + 1):
        for subset in itertools.combinations(range(n), k):
            rem = d - sum(caps[i] + 1 for i in subset)
            if rem >= 0:
                total += (-1) ** k * math.comb(rem + n, n)
    return total


def random_inputs(rng, m, altitudes=None):
    h = rng.choice(altitudes, m) if altitudes is not None else rng.uniform(0, 30000, m)
    ll = rng.uniform(-30, 30, m)
    ul = np.minimum(30, ll + rng.uniform(0, 60, m))
    return np.column_stack([h, rng.uniform(-5, 5, m), ll, ul])


class TestTerms:
    @pytest.mark.parametrize(
        "name,count", [("Poly2222", 15), ("Poly3333", 35), ("Poly3344", 68), ("Poly4444", 70), ("Poly3666", 195)]
    )
    def test_counts(self, name, count):
        assert enumerate_terms(name).shape == (count, 4)

    @pytest.mark.parametrize("caps", list(itertools.product(range(0, 7, 2), range(1, 7, 2), range(0, 7, 3), range(6, 7))))
    def test_inclusion_exclusion(self, caps):
        spec = PolynomialSpec(max(caps), caps)
        assert enumerate_terms(spec).shape[0] == inclusion_exclusion_count(spec.total_degree, caps)

    def test_graded_lex_order(self):
        t = enumerate_terms("Poly2222")
        np.testing.assert_array_equal(t[0], [0, 0, 0, 0])
        np.testing.assert_array_equal(t[1:5], np.eye(4, dtype=int))
        assert np.all(np.diff(t.sum(axis=1)) >= 0)
        assert len({tuple(r) for r in t}) == len(t)

    def test_caps_respected(self):
        t = enumerate_terms("Poly3344")
        assert t[:, 0].max() == 3 and t[:, 1].max() == 3 and t.sum(axis=1).max() == 4
        assert not any((r == [4, 0, 0, 0]).all() or (r == [0, 4, 0, 0]).all() for r in t)

    def test_name_round_trip(self):
        assert PolynomialSpec.from_name("poly3344").name == "Poly3344"
        with pytest.raises(ValueError):
            PolynomialSpec.from_name("Poly33")
        with pytest.raises(ValueError):
            PolynomialSpec(2, (3, 1, 1, 1))


class TestDesign:
    def test_all_ones_row(self):
        d = design_matrix(np.ones((1, 4)), enumerate_terms("Poly1111"))
        np.testing.assert_array_equal(d, np.ones((1, 5)))

    def test_h_squared(self):
        t = enumerate_terms("Poly2222")
        d = design_matrix(np.array([[2.0, 0.0, 0.0, 0.0]]), t)
        col = [i for i, r in enumerate(t) if tuple(r) == (2, 0, 0, 0)][0]
        assert d[0, col] == 4.0
        assert np.all(d[0, 0] == 1.0)

    def test_shape(self, rng):
        assert design_matrix(rng.standard_normal((991, 4)), enumerate_terms("Poly3344")).shape == (991, 68)


class TestFit:
    def _exact(self, rng, spec="Poly2222", m=200):
        x = random_inputs(rng, m)
        w = 1.0 / x.std(axis=0)
        t = enumerate_terms(spec)
        coef = rng.uniform(-1, 1, t.shape[0])
        y = design_matrix(x * w, t) @ coef
        return x, y, coef

    def test_recovers_coefficients(self, rng):
        x, y, coef = self._exact(rng)
        model = PolynomialRegressor((2, 2, 2, 2)).fit(x, y)
        np.testing.assert_allclose(model.denormalized_coefficients(), coef, atol=1e-8)
        np.testing.assert_allclose(model.predict(x), y, atol=1e-6)
        assert np.max(np.abs(metrics(model, x, y)["residuals"])) < 1e-8

    def test_dof(self, rng):
        x = random_inputs(rng, 991)
        y = np.sin(x[:, 0] / 1e4) + x[:, 2] / 30
        for name, dof in (("Poly2222", 976), ("Poly3333", 956), ("Poly3344", 923)):
            spec = PolynomialSpec.from_name(name)
            assert PolynomialRegressor(spec.per_var_max).fit(x, y).stats_["dof"] == dof

    def test_constant_target(self, rng):
        x = random_inputs(rng, 50)
        model = PolynomialRegressor((2, 2, 2, 2)).fit(x, np.full(50, 7.5))
        c = model.denormalized_coefficients()
        assert c[0] == pytest.approx(7.5)
        np.testing.assert_allclose(c[1:], 0.0, atol=1e-12)
        np.testing.assert_allclose(model.predict(random_inputs(rng, 5)), 7.5)

    def test_perfect_metrics(self, rng):
        x, y, _ = self._exact(rng)
        met = metrics(PolynomialRegressor((2, 2, 2, 2)).fit(x, y), x, y)
        assert met["mse"] < 1e-20 and met["r2"] == pytest.approx(1.0)

    def test_insufficient_data(self, rng):
        x = random_inputs(rng, 15)
        with pytest.raises(InsufficientData):
            PolynomialRegressor((2, 2, 2, 2)).fit(x, x[:, 0])

    def test_rank_deficient_with_four_altitudes(self, rng):
        x = random_inputs(rng, 300, altitudes=[0, 10000, 20000, 30000])
        with pytest.raises(RankDeficient):
            PolynomialRegressor((4, 4, 4, 4)).fit(x, x[:, 1])

    def test_multi_output(self, rng):
        x, y1, _ = self._exact(rng)
        y = np.column_stack([y1, 2 * y1 + 1])
        model = PolynomialRegressor((2, 2, 2, 2)).fit(x, y)
        np.testing.assert_allclose(model.predict(x), y, atol=1e-6)

    def test_idempotent_refit(self, rng):
        x = random_inputs(rng, 300)
        y = np.cos(x[:, 1]) + x[:, 3] ** 2 / 900
        m1 = PolynomialRegressor((2, 2, 3, 3)).fit(x, y)
        m2 = PolynomialRegressor((2, 2, 3, 3)).fit(x, m1.predict(x))
        np.testing.assert_allclose(m2.predict(x), m1.predict(x), atol=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 1000), col=st.integers(0, 3), c=st.floats(0.01, 100.0))
    def test_scale_equivariance(self, seed, col, c):
        g = np.random.default_rng(seed)
        x = random_inputs(g, 120)
        y = np.tanh(x[:, 0] / 2e4) + 0.1 * x[:, 2] * x[:, 1] / 30
        xs = x.copy()
        xs[:, col] *= c
        probe = random_inputs(g, 10)
        ps = probe.copy()
        ps[:, col] *= c
        a = PolynomialRegressor((2, 2, 2, 2)).fit(x, y).predict(probe)
        b = PolynomialRegressor((2, 2, 2, 2)).fit(xs, y).predict(ps)
        np.testing.assert_allclose(a, b, rtol=1e-7, atol=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 1000))
    def test_adjusted_below_r2(self, seed):
        g = np.random.default_rng(seed)
        x = random_inputs(g, 80)
        y = g.standard_normal(80)
        model = PolynomialRegressor((1, 1, 1, 1)).fit(x, y)
        assert model.stats_["r2_adjusted"] <= model.stats_["r2"]

    def test_constant_only_model_adjusted_equals_r2(self, rng):
        x = random_inputs(rng, 40)
        model = PolynomialRegressor((0, 0, 0, 0), total_degree=1).fit(x, rng.standard_normal(40))
        assert model.stats_["r2_adjusted"] == model.stats_["r2"]

    def test_fit_records_skips_empty(self, rng):
        x = random_inputs(rng, 40)
        recs = [MfeRecord(InputVector(*row), int(10 + i), 100.0, 0.0) for i, row in enumerate(x)]
        recs.append(MfeRecord(InputVector(0.0, 0.0, 0.0, 0.0), 0))
        model = fit_records(recs, "Poly1111")
        assert model.stats_["m"] == 40


class TestStatistics:
    def test_adjusted_r2_arithmetic(self):
        assert adjusted_r2(0.99, 101, 1) == pytest.approx(1 - 0.01 * 100 / 99, abs=1e-15)
        assert adjusted_r2(0.99, 101, 1) == pytest.approx(0.98990, abs=5e-6)

    def test_error_percentage(self):
        assert error_percentage(100, 90) == pytest.approx(10.0)
        assert error_percentage(4898, 4852) == pytest.approx(0.93916, abs=5e-6)
        assert error_percentage(3.3, 3.3) == 0.0
        with pytest.raises(ZeroDivisionError):
            error_percentage(0.0, 1.0)

    def test_counts_rounding(self, rng):
        x = random_inputs(rng, 40)
        model = PolynomialRegressor((1, 1, 1, 1)).fit(x, x[:, 2] / 10)
        assert np.all(model.predict_counts(x) >= 0)
        assert model.predict_counts(x).dtype.kind == "i"


class TestPredictionBounds:
    def test_exact_fit_zero_width(self, rng):
        x = random_inputs(rng, 100)
        y = 3.0 + x[:, 0] / 1e4
        _, lo, hi = PolynomialRegressor((1, 1, 1, 1)).fit(x, y).predict_interval(x[:5])
        assert np.max(hi - lo) < 1e-6

    def test_widens_outside_hull(self, rng):
        x = random_inputs(rng, 200)
        y = x[:, 0] / 1e4 + rng.normal(0, 0.1, 200)
        model = PolynomialRegressor((2, 1, 1, 1)).fit(x, y)
        probe = np.tile(x.mean(axis=0), (6, 1))
        probe[:, 0] = [30000, 35000, 40000, 50000, 70000, 100000]
        _, lo, hi = model.predict_interval(probe)
        assert np.all(np.diff(hi - lo) > 0)

    def test_confidence_nesting(self, rng):
        x = random_inputs(rng, 100)
        y = x[:, 1] + rng.normal(0, 0.3, 100)
        model = PolynomialRegressor((1, 1, 1, 1)).fit(x, y)
        _, lo95, hi95 = model.predict_interval(x[:10], 0.95)
        _, lo99, hi99 = model.predict_interval(x[:10], 0.99)
        assert np.all(lo99 < lo95) and np.all(hi99 > hi95)
        with pytest.raises(ValueError):
            model.predict_interval(x[:1], 1.0)

    def test_t_quantile_formula(self, rng):
        x = random_inputs(rng, 60)
        y = x[:, 1] + rng.normal(0, 0.3, 60)
        model = PolynomialRegressor((1, 1, 1, 1)).fit(x, y)
        yhat, lo, hi = model.predict_interval(x[:3], 0.9)
        # independent reconstruction from the normal equations
        from scipy import stats

        w = model.scaling_.input_weights
        d = design_matrix(x * w, model.exponents_)
        xtx_inv = np.linalg.inv(d.T @ d)
        lev = np.einsum("ij,jk,ik->i", d[:3], xtx_inv, d[:3])
        s = math.sqrt(model.stats_["sigma2"])
        half = stats.t.ppf(0.95, 55) * s * np.sqrt(1 + lev) * model.scaling_.output_halfrange[0]
        np.testing.assert_allclose(hi - yhat, half, rtol=1e-9)


class TestDiagnostic:
    def test_prefers_low_h_degree(self, rng):
        alts = [0, 10000, 20000, 30000]
        x = random_inputs(rng, 400, altitudes=alts)
        f = lambda a: 1 + a[:, 0] / 3e4 + (a[:, 2] / 30) ** 3 - 0.5 * a[:, 2] / 30
        y = f(x) + rng.normal(0, 0.01, 400)
        xt = random_inputs(rng, 40, altitudes=alts)
        xp = random_inputs(rng, 10, altitudes=[5000, 15000, 25000])
        rows = degree_diagnostic(x[:360], y[:360], x[360:], y[360:], xp, f(xp), ["Poly4333", "Poly1333"])
        assert [r.name for r in rows] == ["Poly1333", "Poly4333"]
        assert rows[1].flagged and not rows[0].flagged

    def test_single_spec(self, rng):
        x = random_inputs(rng, 200)
        y = x[:, 1] / 5 + rng.normal(0, 0.01, 200)
        rows = degree_diagnostic(x[:150], y[:150], x[150:], y[150:], x[:5], y[:5], ["Poly1111"])
        assert len(rows) == 1 and not rows[0].flagged


class TestArtifacts:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        x = random_inputs(rng, 150)
        y = np.sin(x[:, 0] / 1e4) * x[:, 3]
        model = PolynomialRegressor((3, 3, 4, 4)).fit(x, y)
        path = tmp_path / "m.json"
        model.to_json(path)
        back = PolynomialRegressor.from_json(path)
        np.testing.assert_array_equal(back.coef_, model.coef_)
        np.testing.assert_array_equal(back.predict(x), model.predict(x))
        assert json.loads(path.read_text())["exponent_table"][0] == [0, 0, 0, 0]

    def test_estimator_api(self, rng):
        model = PolynomialRegressor((2, 2, 3, 3))
        assert model.get_params() == {"max_degrees": (2, 2, 3, 3), "total_degree": None}
        c = clone(model)
        x = random_inputs(rng, 100)
        c.fit(x, x[:, 0])
        assert 0.99 < c.score(x, x[:, 0]) <= 1.0
