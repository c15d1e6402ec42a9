import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from oracles import density_kl
from svgpc.numerics import gauss_hermite
from svgpc.softmax import (
    SoftmaxBoundTerms,
    gumbel_kl,
    softmax_elbo_term,
    softmax_P,
    softmax_predict_batch,
    softmax_predict_mc,
    theta_bound,
)


class TestP:
    @pytest.mark.parametrize("C", [2, 3, 6])
    def test_zero_inputs(self, C):
        assert softmax_P(0, np.zeros(C), np.zeros(C)) == pytest.approx(C - 1, rel=1e-15)

    def test_deterministic_limit_is_log_softmax(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            mu = rng.normal(size=4) * 3
            y = int(rng.integers(4))
            term = softmax_elbo_term(softmax_P(y, mu, np.zeros(4)))
            assert abs(term - special.log_softmax(mu)[y]) <= 1e-12

    def test_monte_carlo(self):
        mu, var = np.array([0.4, -0.3, 0.8]), np.array([0.5, 0.2, 0.9])
        f = np.random.default_rng(1).normal(mu, np.sqrt(var), size=(1_000_000, 3))
        samples = np.exp(-f[:, 1]) * (np.exp(f[:, 0]) + np.exp(f[:, 2]))
        se = samples.std() / np.sqrt(samples.size)
        assert abs(softmax_P(1, mu, var) - samples.mean()) <= 3 * se

    def test_no_overflow(self):
        P = softmax_P(0, np.array([800.0, -800.0, 0.0]), np.array([1.0, 1.0, 1.0]))
        assert P >= 0 and np.isfinite(softmax_elbo_term(max(P, 1e-300)))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(-20, 20))
    def test_shift_invariance(self, seed, shift):
        rng = np.random.default_rng(seed)
        mu, var = rng.normal(size=3), rng.uniform(0, 2, 3)
        P1, P2 = softmax_P(2, mu, var), softmax_P(2, mu + shift, var)
        assert abs(np.log(P1) - np.log(P2)) <= 1e-12


class TestBound:
    def test_examples(self):
        assert softmax_elbo_term(2.0) == pytest.approx(-np.log(3), abs=1e-15)
        assert -1e-10 < softmax_elbo_term(1e-10) < 0

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            softmax_elbo_term(0.0)

    @pytest.mark.parametrize("P", [0.01, 0.5, 2.0, 37.0])
    def test_theta_optimum(self, P):
        theta = P + 1.0
        h = 1e-6
        grad = (theta_bound(theta + h, P) - theta_bound(theta - h, P)) / (2 * h)
        assert abs(grad) <= 1e-8
        assert theta_bound(theta, P) == pytest.approx(softmax_elbo_term(P), abs=1e-14)
        for other in (0.5 * theta, 2 * theta):
            assert theta_bound(other, P) < theta_bound(theta, P)

    def test_bound_terms_dataclass(self):
        terms = SoftmaxBoundTerms.from_log_P(np.log([0.5, 3.0]))
        np.testing.assert_allclose(terms.theta_opt, terms.P + 1.0, rtol=0, atol=0)
        assert np.all(terms.term <= 0)


class TestGumbelKL:
    def test_examples(self):
        assert gumbel_kl(1.0) == 0.0
        assert gumbel_kl(np.e) == pytest.approx(np.exp(-1), abs=1e-15)

    @pytest.mark.parametrize("theta", [1.5, 3.0, 10.0])
    def test_density_quadrature(self, theta):
        assert abs(gumbel_kl(theta) - density_kl(theta)) <= 1e-6

    def test_nonnegative_unique_zero(self):
        grid = np.logspace(-2, 2, 4001)
        kl = gumbel_kl(grid)
        assert np.all(kl >= 0)
        assert np.all(kl[np.abs(grid - 1) > 1e-3] > 0)


class TestPrediction:
    def test_zero_variance_is_softmax(self):
        mu = np.array([0.3, -1.0, 2.0])
        for n in (1, 7, 100):
            np.testing.assert_allclose(softmax_predict_mc(mu, np.zeros(3), n, seed=0), special.softmax(mu),
                                       rtol=0, atol=1e-15)

    def test_symmetric_is_uniform(self):
        n = 20_000
        p = softmax_predict_mc(np.full(4, 0.2), np.full(4, 1.3), n, seed=3)
        assert np.all(np.abs(p - 0.25) <= 3 / np.sqrt(n))

    def test_sums_to_one_and_deterministic(self):
        rng = np.random.default_rng(4)
        mu, var = rng.normal(size=(10, 3)) * 3, rng.uniform(0, 3, (10, 3))
        p = softmax_predict_batch(mu, var, 500, seed=9)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(p, softmax_predict_batch(mu, var, 500, seed=9))

    def test_row_estimate_independent_of_batch(self):
        rng = np.random.default_rng(5)
        mu, var = rng.normal(size=(6, 3)), rng.uniform(0, 1, (6, 3))
        full = softmax_predict_batch(mu, var, 300, seed=1, chunk=4)
        np.testing.assert_array_equal(full[2], softmax_predict_batch(mu[2:3], var[2:3], 300, seed=1)[0])

    def test_two_class_against_quadrature(self):
        mu, var = np.array([0.7, -0.4]), np.array([1.1, 0.6])
        n = 1_000_000
        rule = gauss_hermite(64)
        exact = rule.expect(special.expit, mu[0] - mu[1], var.sum())
        t = np.random.default_rng(6).standard_normal((n, 2))
        draws = special.expit(mu[0] - mu[1] + np.sqrt(var[0]) * t[:, 0] - np.sqrt(var[1]) * t[:, 1])
        se = draws.std() / np.sqrt(n)
        p = softmax_predict_mc(mu, var, n, seed=7)
        assert abs(p[0] - exact) <= 3 * se

    def test_error_shrinks_with_samples(self):
        mu, var = np.array([0.5, 0.0, -0.5]), np.array([1.0, 2.0, 0.5])
        spread = {n: np.std([softmax_predict_mc(mu, var, n, seed=s)[0] for s in range(30)])
                  for n in (10_000, 100_000)}
        ratio = spread[10_000] / spread[100_000]
        assert np.sqrt(10) / 1.5 <= ratio <= np.sqrt(10) * 1.5

    def test_invalid_samples(self):
        with pytest.raises(ValueError):
            softmax_predict_mc(np.zeros(3), np.ones(3), 0)
