import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svgpc import autodiff as ad
from oracles import finite_difference_mismatches, literal_elbo, random_problem
from svgpc.kernels import KernelSpec, kernel_matrix
from svgpc.model import (
    ModelState,
    build_model,
    elbo,
    elbo_grad,
    elbo_terms,
    predict,
    raw_from_scale,
    scale_from_raw,
)
from svgpc.numerics import gauss_hermite

TASKS = ["binary", "multiclass", "softmax"]
RULE = gauss_hermite()


def set_prior(state):
    """q(u^c) = p(u^c) for every latent."""
    for k in range(state.num_latent):
        kernel = state.kernel(0 if state.shared_kernel else k)
        Kmm = kernel_matrix(kernel, state.params["Z"]) + state.jitter * np.eye(state.num_inducing)
        state.params["q_mu"][k] = 0.0
        state.params["q_sqrt"][k] = raw_from_scale(np.linalg.cholesky(Kmm))


class TestConstruction:
    def test_defaults(self):
        X = np.random.default_rng(0).normal(size=(50, 3))
        state = build_model("binary", X, 2, noise_a=1.0, num_inducing=8)
        assert state.params["q_mu"].shape == (1, 8)
        assert state.params["q_sqrt"].shape == (1, 8, 8)
        assert np.exp(state.params["kernel0.0.log_lengthscale"]) == pytest.approx(0.1 * np.sqrt(3))
        assert np.exp(state.params["kernel0.0.log_variance"]) == pytest.approx(5.0)
        assert float(state.delta()) == pytest.approx(1e-3, rel=1e-12)
        assert "noise_a" not in state.params

    def test_invariants(self):
        X = np.zeros((4, 2)) + np.arange(4)[:, None]
        with pytest.raises(ValueError):
            build_model("binary", X, 3, noise_a=1.0)
        with pytest.raises(ValueError):
            build_model("softmax", X, 2)
        with pytest.raises(ValueError):
            build_model("multiclass", X, 3)  # no noise variance

    def test_scale_transform_round_trip(self):
        rng = np.random.default_rng(1)
        scale = np.tril(rng.normal(size=(4, 4)), -1) + np.diag(rng.uniform(0.1, 2, 4))
        np.testing.assert_allclose(scale_from_raw(raw_from_scale(scale)), scale, rtol=1e-15)

    def test_per_class_kernels(self):
        X = np.random.default_rng(2).normal(size=(30, 2))
        state = build_model("softmax", X, 3, KernelSpec("rbf", 1.0, 1.0), 6, shared_kernel=False)
        assert len(state.kernel_templates) == 3
        assert "kernel2.0.log_variance" in state.params


class TestElbo:
    @pytest.mark.parametrize("task", TASKS)
    def test_full_batch_is_literal_sum(self, task):
        state, X, y = random_problem(task, 3)
        assert elbo(state, X, y, RULE) == pytest.approx(literal_elbo(state, X, y, RULE), rel=1e-12, abs=1e-10)

    @pytest.mark.parametrize("task", TASKS)
    def test_singleton_batches_unbiased(self, task):
        state, X, y = random_problem(task, 4, n=16)
        full = elbo(state, X, y, RULE)
        singles = [elbo(state, X[i:i + 1], y[i:i + 1], RULE) for i in range(16)]
        assert abs(np.mean(singles) - full) <= 1e-8

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([2, 4, 8]), st.sampled_from(TASKS))
    def test_partition_unbiased(self, seed, batch, task):
        state, X, y = random_problem(task, seed % 1000, n=16)
        perm = np.random.default_rng(seed).permutation(16)
        parts = [elbo(state, X[idx], y[idx], RULE) for idx in perm.reshape(-1, batch)]
        assert abs(np.mean(parts) - elbo(state, X, y, RULE)) <= 1e-8

    def test_ordering_over_noise_variance(self):
        for seed in range(10):
            state, X, _ = random_problem("binary", seed)
            mu = predict(state, X)[1].mu[:, 0]
            y = np.where(mu > 0, 1, -1)
            values = []
            for a in (0.0, 1.0, 2.897):
                state.noise_a = a
                values.append(elbo(state, X, y, RULE))
            assert values[0] > values[1] > values[2]

    @pytest.mark.parametrize("task", TASKS)
    def test_prior_gives_zero_kl(self, task):
        state, X, y = random_problem(task, 5)
        set_prior(state)
        data, kls = elbo_terms(state, state.params, X, y, RULE)
        assert abs(sum(float(k) for k in kls)) <= 1e-10
        assert elbo(state, X, y, RULE) == pytest.approx(float(np.sum(data)), abs=1e-10)

    def test_mean_perturbation_touches_one_kl(self):
        state, X, y = random_problem("softmax", 6)
        _, before = elbo_terms(state, state.params, X, y, RULE)
        state.params["q_mu"][1, 2] += 0.3
        _, after = elbo_terms(state, state.params, X, y, RULE)
        changed = [abs(float(a) - float(b)) > 1e-12 for a, b in zip(before, after)]
        assert changed == [False, True, False]
        assert literal_elbo(state, X, y, RULE) == pytest.approx(elbo(state, X, y, RULE), rel=1e-12)

    @pytest.mark.parametrize("task", TASKS)
    def test_kl_mean_gradient_vanishes_at_prior(self, task):
        state, X, y = random_problem(task, 7)
        set_prior(state)
        free = {"q_mu": state.params["q_mu"]}

        def kl_total(leaves):
            _, kls = elbo_terms(state, {**state.params, **leaves}, X, y, RULE)
            total = kls[0]
            for kl in kls[1:]:
                total = ad.add(total, kl)
            return total

        _, g = ad.value_and_grad(kl_total, free)
        np.testing.assert_allclose(g["q_mu"], 0.0, atol=1e-12)

    def test_invalid_labels(self):
        state, X, _ = random_problem("multiclass", 8)
        with pytest.raises(ValueError):
            elbo(state, X, np.full(20, 4), RULE)
        state, X, _ = random_problem("binary", 8)
        with pytest.raises(ValueError):
            elbo(state, X, np.zeros(20), RULE)


class TestGradients:
    @pytest.mark.parametrize("task", TASKS)
    def test_finite_differences(self, task):
        state, X, y = random_problem(task, 9)
        bad, checked = finite_difference_mismatches(state, X, y)
        assert checked > 40
        assert bad == []

    @pytest.mark.parametrize("a", [0.0, 2.897])
    def test_finite_differences_other_noise(self, a):
        state, X, y = random_problem("multiclass", 10, noise_a=a)
        bad, _ = finite_difference_mismatches(state, X, y)
        assert bad == []

    def test_finite_differences_per_class_sum_kernel(self):
        state, X, y = random_problem("softmax", 11, shared_kernel=False)
        s = KernelSpec.sum(KernelSpec("rbf", 0.8, 1.0), KernelSpec("matern52", 1.3, 0.5))
        fresh = build_model("softmax", X, 3, s, 5, seed=11, shared_kernel=False)
        fresh.params["q_mu"] = state.params["q_mu"]
        bad, _ = finite_difference_mismatches(fresh, X, y)
        assert bad == []

    def test_upper_triangle_has_no_gradient(self):
        state, X, y = random_problem("binary", 12)
        _, g = elbo_grad(state, X, y, RULE)
        assert np.all(np.triu(g["q_sqrt"][0], 1) == 0)

    def test_frozen_delta_not_differentiated(self):
        state, X, y = random_problem("binary", 13)
        state.trainable_delta = False
        _, g = elbo_grad(state, X, y, RULE)
        assert "delta_logit" not in g


class TestPredict:
    def test_untrained_binary_is_half(self):
        X = np.random.default_rng(0).normal(size=(40, 2))
        state = build_model("binary", X, 2, noise_a=1.0, num_inducing=10)
        probs, _ = predict(state, np.random.default_rng(1).normal(size=(25, 2)) * 3)
        np.testing.assert_array_equal(probs, 0.5)

    def test_untrained_softmax_uniform(self):
        X = np.random.default_rng(0).normal(size=(40, 2))
        state = build_model("softmax", X, 3, num_inducing=10)
        probs, _ = predict(state, X[:5], n_samples=20_000)
        assert np.all(np.abs(probs - 1 / 3) <= 3 / np.sqrt(20_000))

    @pytest.mark.parametrize("task", TASKS)
    def test_normalized(self, task):
        state, X, _ = random_problem(task, 14)
        probs, marg = predict(state, np.random.default_rng(2).normal(size=(30, 2)) * 2)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(marg.var >= 1e-12)

    def test_binary_bounds(self):
        state, X, _ = random_problem("binary", 15)
        state.params["q_mu"] *= 100
        probs, _ = predict(state, X)
        delta = float(state.delta())
        assert np.all(probs >= delta) and np.all(probs <= 1 - delta)

    def test_dimension_check(self):
        state, _, _ = random_problem("binary", 16)
        with pytest.raises(ValueError, match="columns"):
            predict(state, np.zeros((3, 5)))


class TestCheckpoint:
    @pytest.mark.parametrize("task", TASKS)
    def test_round_trip_bytes(self, task, tmp_path):
        state, X, y = random_problem(task, 17)
        state.metadata = {"seed": 17, "config": {"iterations": 5}}
        path = tmp_path / "m.json"
        state.save(path)
        back = ModelState.load(path)
        back.save(tmp_path / "m2.json")
        assert path.read_bytes() == (tmp_path / "m2.json").read_bytes()
        for name, v in state.params.items():
            np.testing.assert_array_equal(back.params[name], v)
        assert elbo(back, X, y, RULE) == elbo(state, X, y, RULE)

    def test_self_describing(self, tmp_path):
        state, _, _ = random_problem("multiclass", 18)
        d = json.loads(state.dumps())
        for key in ("task", "num_classes", "kernels", "params", "delta", "noise_a", "n_total", "metadata"):
            assert key in d

    def test_rejects_foreign_format(self):
        with pytest.raises(ValueError):
            ModelState.from_dict({"format": "other"})
