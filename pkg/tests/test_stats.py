import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import ks_brute, sigma_direct, sinkhorn_log
from dotlab import stats
from dotlab.divergence import make_entropic, make_power
from dotlab.errors import ZeroVariance
from dotlab.measure import DiscreteMeasure, build_cost, cost_from_values, uniform_grid_measure
from dotlab.solver import SolveConfig

# instance B population quantities from log-domain Sinkhorn and explicit sums
B_VALUE = 0.4331277178840298
B_SIGMA1 = 0.00361922301993
B_SIGMA2 = 0.0323065060362


def rand_problem(r, n_max=10):
    n, m = r.integers(1, n_max + 1, size=2)
    a, b = r.random(n) + 0.05, r.random(m) + 0.05
    mu = DiscreteMeasure(r.random((n, 1)), a / a.sum())
    nu = DiscreteMeasure(r.random((m, 1)), b / b.sum())
    return mu, nu, cost_from_values(r.random((n, m)))


class TestAsymptoticVariances:
    def test_single_atoms_zero(self, single_atoms, entropic):
        mu, nu, cost = single_atoms
        _, f, g = stats.exact_value_and_potentials(mu, nu, cost, entropic)
        assert stats.asymptotic_variances(f, g, mu, nu, cost, entropic) == (0.0, 0.0, 0.0, 0.0)

    def test_instance_a_symmetric(self, instance_a, entropic):
        mu, nu, cost = instance_a
        _, f, g = stats.exact_value_and_potentials(mu, nu, cost, entropic)
        v = stats.asymptotic_variances(f, g, mu, nu, cost, entropic)
        assert abs(v.sigma1_sq) <= 1e-14 and abs(v.sigma3_sq) <= 1e-14

    def test_instance_b_against_sinkhorn(self, instance_b, entropic):
        mu, nu, cost = instance_b
        S, f, g = stats.exact_value_and_potentials(mu, nu, cost, entropic)
        ref, u, v = sinkhorn_log(mu.weights, nu.weights, cost.values)
        assert abs(S - ref) <= 1e-10 and abs(S - B_VALUE) <= 1e-10
        shift = mu.weights @ u
        s_ref = sigma_direct(u - shift, v + shift, mu.weights, nu.weights, cost.values,
                             lambda t: math.exp(t - 1))
        got = stats.asymptotic_variances(f, g, mu, nu, cost, entropic)
        np.testing.assert_allclose(got, s_ref, atol=1e-9)
        assert abs(got.sigma1_sq - B_SIGMA1) <= 1e-9
        assert abs(got.sigma2_sq - B_SIGMA2) <= 1e-9
        assert got.sigma1_sq > 0

    def test_matches_direct_sums_exactly(self, instance_b, entropic):
        mu, nu, cost = instance_b
        _, f, g = stats.exact_value_and_potentials(mu, nu, cost, entropic)
        ref = sigma_direct(f, g, mu.weights, nu.weights, cost.values, lambda t: math.exp(t - 1))
        np.testing.assert_allclose(stats.asymptotic_variances(f, g, mu, nu, cost, entropic), ref, atol=1e-12)

    def test_shift_invariance(self, instance_b, entropic, rng):
        mu, nu, cost = instance_b
        _, f, g = stats.exact_value_and_potentials(mu, nu, cost, entropic)
        base = stats.asymptotic_variances(f, g, mu, nu, cost, entropic)
        for a in rng.uniform(-3, 3, size=20):
            np.testing.assert_allclose(
                stats.asymptotic_variances(f + a, g - a, mu, nu, cost, entropic), base, atol=1e-12)

    def test_expansion_identity(self, instance_b, entropic):
        mu, nu, cost = instance_b
        _, f, g = stats.exact_value_and_potentials(mu, nu, cost, entropic)
        tab = stats.cross_term_table(f, g, mu, nu, cost, entropic)
        A = np.exp(f[:, None] + g[None, :] - cost.values - 1.0) @ nu.weights
        w = mu.weights

        def var(x):
            return w @ (x - w @ x) ** 2

        # Var(f - A) = Var f + Var A - 2 Cov(f, A)
        expanded = var(f) + var(A) - 2 * tab["x_conditioned"]
        assert abs(expanded - var(f - A)) <= 1e-14
        assert abs(tab["discrepancy"]) <= 1e-14

    def test_epsilon_scaling(self, instance_b, entropic):
        mu, nu, cost = instance_b
        eps = 0.5
        _, f, g = stats.exact_value_and_potentials(mu, nu, cost, entropic, SolveConfig(epsilon=eps))
        ref = sigma_direct(f, g, mu.weights, nu.weights, cost.values,
                           lambda t: eps * math.exp(t / eps - 1))
        np.testing.assert_allclose(
            stats.asymptotic_variances(f, g, mu, nu, cost, entropic, eps), ref, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["entropic", "quadratic"]))
    def test_random_supports_match_oracle(self, seed, which):
        div = make_entropic() if which == "entropic" else make_power(2.0)
        mu, nu, cost = rand_problem(np.random.default_rng(seed))
        _, f, g = stats.exact_value_and_potentials(mu, nu, cost, div)
        psi = lambda t: float(div.psi(np.array([t]))[0])  # noqa: E731
        ref = sigma_direct(f, g, mu.weights, nu.weights, cost.values, psi)
        got = stats.asymptotic_variances(f, g, mu, nu, cost, div)
        np.testing.assert_allclose(got, np.clip(ref, 0, None), atol=1e-11)
        assert min(got) >= 0.0


class TestKs:
    def test_normal_quantiles(self):
        from scipy.special import ndtri

        n = 2000
        q = ndtri((np.arange(1, n + 1) - 0.5) / n)
        assert stats.ks_statistic(q) <= 0.005

    def test_all_zero(self):
        assert stats.ks_statistic(np.zeros(100)) == pytest.approx(0.5)

    def test_uniform_sample(self, rng):
        x = rng.uniform(size=1000)
        d = stats.ks_statistic(x)
        assert d >= 0.25
        assert abs(d - ks_brute(x)) <= 1e-9

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-6, 6, allow_nan=False), min_size=1, max_size=60))
    def test_against_brute_force(self, xs):
        assert abs(stats.ks_statistic(xs) - ks_brute(xs)) <= 1e-9

    def test_empty(self):
        with pytest.raises(ValueError):
            stats.ks_statistic([])


class TestRate:
    def test_degenerate_zero_error(self, single_atoms, entropic):
        mu, nu, cost = single_atoms
        rep = stats.rate_experiment(mu, nu, cost, entropic, [10, 20, 40, 80], 50, 0, workers=1)
        assert rep.degenerate_zero_error
        assert math.isnan(rep.fitted_slope)
        np.testing.assert_array_equal(rep.mean_abs_error, 0.0)

    def test_validation(self, instance_a, entropic):
        mu, nu, cost = instance_a
        with pytest.raises(ValueError):
            stats.rate_experiment(mu, nu, cost, entropic, [10, 20, 40, 80], 49, 0)
        with pytest.raises(ValueError):
            stats.rate_experiment(mu, nu, cost, entropic, [10, 20, 20, 80], 50, 0)
        with pytest.raises(ValueError):
            stats.rate_experiment(mu, nu, cost, entropic, [10, 20, 40], 50, 0)

    def test_bias_variance_identity(self, instance_b, entropic):
        mu, nu, cost = instance_b
        rep = stats.rate_experiment(mu, nu, cost, entropic, [10, 20, 40, 80], 50, 5, workers=1)
        rows = stats.bias_variance_table(rep)
        assert [r["n"] for r in rows] == [10, 20, 40, 80]
        for r in rows:
            assert abs(r["mse"] - r["bias_sq_plus_variance"]) <= 1e-10
        assert abs(rep.population_value - B_VALUE) <= 1e-10

    def test_workers_deterministic(self, instance_b, entropic):
        mu, nu, cost = instance_b
        r1 = stats.rate_experiment(mu, nu, cost, entropic, [10, 20, 40, 80], 50, 9, workers=1)
        r2 = stats.rate_experiment(mu, nu, cost, entropic, [10, 20, 40, 80], 50, 9, workers=2)
        assert r1.mean_abs_error.tobytes() == r2.mean_abs_error.tobytes()
        assert r1.fitted_slope == r2.fitted_slope

    def test_seed_changes_values(self, instance_b, entropic):
        mu, nu, cost = instance_b
        r1 = stats.rate_experiment(mu, nu, cost, entropic, [10, 20, 40, 80], 50, 1, workers=1)
        r2 = stats.rate_experiment(mu, nu, cost, entropic, [10, 20, 40, 80], 50, 2, workers=1)
        assert r1.mean_abs_error.tobytes() != r2.mean_abs_error.tobytes()


class TestClt:
    def test_zero_variance_instance_a(self, instance_a, entropic):
        mu, nu, cost = instance_a
        with pytest.raises(ZeroVariance):
            stats.clt_experiment(mu, nu, cost, entropic, "one_sample_mu", n=100, replicates=500)

    def test_quadratic_warns(self, instance_b, quadratic):
        mu, nu, cost = instance_b
        with pytest.warns(stats.NotDualRegularWarning):
            rep = stats.clt_experiment(mu, nu, cost, quadratic, "one_sample_nu", m=50,
                                       replicates=500, seed=1, workers=1)
        assert math.isnan(rep.sigma_sq_plugin) or rep.sigma_sq_plugin >= 0

    def test_unbalanced_warns(self, instance_b, entropic):
        mu, nu, cost = instance_b
        with pytest.warns(stats.UnbalancedSampleWarning):
            stats.clt_experiment(mu, nu, cost, entropic, "two_sample", n=400, m=10,
                                 replicates=500, seed=1, workers=1)

    def test_small_run(self, instance_b, entropic):
        mu, nu, cost = instance_b
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            rep = stats.clt_experiment(mu, nu, cost, entropic, "one_sample_mu", n=200,
                                       replicates=500, seed=4, workers=1)
        assert rep.m is None and rep.lam is None
        assert abs(rep.sigma_sq_exact - B_SIGMA1) <= 1e-9
        assert abs(np.mean(rep.standardized)) <= 1e-12
        assert rep.sigma_sq_plugin > 0
        assert 0 <= rep.ks_distance <= 1

    def test_validation(self, instance_b, entropic):
        mu, nu, cost = instance_b
        with pytest.raises(ValueError):
            stats.clt_experiment(mu, nu, cost, entropic, "sideways", n=10)
        with pytest.raises(ValueError):
            stats.clt_experiment(mu, nu, cost, entropic, "one_sample_mu", n=10, replicates=100)
        with pytest.raises(ValueError):
            stats.clt_experiment(mu, nu, cost, entropic, "one_sample_mu", n=10, centering="median")


class TestConcentration:
    def test_efron_stein_small(self, instance_b, entropic):
        mu, nu, cost = instance_b
        res = stats.efron_stein_check(mu, nu, cost, entropic, 30, 100, 0, workers=1)
        assert res.empirical_var > 0 and res.es_bound_estimate > 0
        assert res.es_bound_estimate == pytest.approx(res.x_term + res.y_term)

    def test_deviation_profile(self, instance_b, entropic):
        mu, nu, cost = instance_b
        prof = stats.deviation_profile(mu, nu, cost, entropic, 50, 1000, 3, workers=1)
        assert prof.t == (1, 2, 3, 4)
        np.testing.assert_allclose(prof.envelope, [1.0, 4 * math.exp(-2), 4 * math.exp(-3), 4 * math.exp(-4)])
        assert prof.exceedance[0] == pytest.approx(math.exp(-1), abs=2e-3)
        assert all(b <= a for a, b in zip(prof.exceedance, prof.exceedance[1:]))
        assert prof.kappa > 0

    def test_deviation_needs_replicates(self, instance_b, entropic):
        mu, nu, cost = instance_b
        with pytest.raises(ValueError):
            stats.deviation_profile(mu, nu, cost, entropic, 50, 999, 3)

    def test_linearization_small(self, instance_b, entropic):
        mu, nu, cost = instance_b
        rows = stats.linearization_diagnostic(mu, nu, cost, entropic, [50, 200], 200, 1, workers=1)
        assert [n for n, _ in rows] == [50, 200]
        assert all(v >= 0 for _, v in rows)

    def test_remainder_at_population(self, instance_b, entropic):
        mu, nu, cost = instance_b
        S, f, g = stats.exact_value_and_potentials(mu, nu, cost, entropic)
        cond = np.exp(f[:, None] + g[None, :] - cost.values - 1.0) @ nu.weights
        # at mu_n = mu the remainder is S - 0 + 1
        assert stats.remainder(mu, S, f, cond) == pytest.approx(S + 1.0, abs=1e-12)


def test_grid_population_rate_values(entropic):
    pop = uniform_grid_measure(1, 5)
    cost = build_cost(pop, pop)
    rep = stats.rate_experiment(pop, pop, cost, entropic, [20, 40, 80, 160], 50, 11, workers=1)
    assert rep.failures == 0
    assert np.all(rep.bias > -3 * rep.stderr)
