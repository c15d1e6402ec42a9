import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svgpc import autodiff as ad
from svgpc.kernels import KernelSpec, canonical_family, kernel_diag, kernel_matrix

FAMILIES = ["rbf", "matern32", "matern52"]


def reference(family, ls, var, r):
    """Closed forms written out directly from the distance."""
    r = r / ls
    if family == "rbf":
        return var * np.exp(-0.5 * r**2)
    if family == "matern32":
        return var * (1 + np.sqrt(3) * r) * np.exp(-np.sqrt(3) * r)
    return var * (1 + np.sqrt(5) * r + 5 * r**2 / 3) * np.exp(-np.sqrt(5) * r)


def test_rbf_diagonal_is_variance():
    X = np.random.default_rng(0).normal(size=(6, 2))
    K = kernel_matrix(KernelSpec("rbf", 1.0, 5.0), X)
    np.testing.assert_allclose(np.diag(K), 5.0)


def test_rbf_at_root_two():
    k = kernel_matrix(KernelSpec("rbf", 1.0, 1.0), np.array([[0.0, 0.0]]), np.array([[1.0, 1.0]]))
    assert k[0, 0] == pytest.approx(np.exp(-1.0), abs=1e-15)


def test_matern32_limits():
    spec = KernelSpec("matern32", 1.0, 1.0)
    x = np.zeros((1, 1))
    assert kernel_matrix(spec, x)[0, 0] == 1.0
    assert kernel_matrix(spec, x, np.array([[1e3]]))[0, 0] < 1e-300 + 1e-12


@pytest.mark.parametrize("family", FAMILIES)
def test_matches_closed_forms(family):
    rng = np.random.default_rng(1)
    X, X2 = rng.normal(size=(7, 3)), rng.normal(size=(5, 3))
    r = np.sqrt(((X[:, None] - X2[None]) ** 2).sum(-1))
    K = kernel_matrix(KernelSpec(family, 0.7, 2.3), X, X2)
    np.testing.assert_allclose(K, reference(family, 0.7, 2.3, r), rtol=1e-13)


def test_diag_examples():
    X = np.random.default_rng(2).normal(size=(10, 2))
    np.testing.assert_array_equal(kernel_diag(KernelSpec("rbf", 1.0, 5.0), X), np.full(10, 5.0))
    s = KernelSpec.sum(KernelSpec("rbf", 1.0, 5.0), KernelSpec("matern52", 2.0, 5.0))
    np.testing.assert_array_equal(kernel_diag(s, X), np.full(10, 10.0))
    for family in FAMILIES:
        spec = KernelSpec(family, 0.4, 1.7)
        np.testing.assert_allclose(kernel_diag(spec, X), np.diag(kernel_matrix(spec, X)), atol=1e-12)


def test_sum_is_elementwise_sum():
    X = np.random.default_rng(3).normal(size=(8, 2))
    a, b = KernelSpec("rbf", 0.5, 1.0), KernelSpec("matern32", 1.5, 2.0)
    np.testing.assert_allclose(kernel_matrix(KernelSpec.sum(a, b), X),
                               kernel_matrix(a, X) + kernel_matrix(b, X), atol=1e-15)


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        kernel_matrix(KernelSpec("rbf"), np.zeros((2, 2)), np.zeros((2, 3)))


def test_invalid_specs():
    with pytest.raises(ValueError):
        KernelSpec("rbf", -1.0, 1.0)
    with pytest.raises(ValueError):
        KernelSpec("rbf", 1.0, 0.0)
    with pytest.raises(ValueError):
        KernelSpec.sum(KernelSpec("rbf"))
    with pytest.raises(ValueError):
        KernelSpec("cosine")


def test_family_aliases():
    assert canonical_family("Matern32") == "matern32"
    assert canonical_family("matern_52") == "matern52"
    assert canonical_family("SE") == "rbf"


def test_dict_round_trip():
    s = KernelSpec.sum(KernelSpec("rbf", 0.3, 2.0), KernelSpec("matern32", 1.1, 0.5))
    assert KernelSpec.from_dict(s.to_dict()) == s


@pytest.mark.parametrize("family", FAMILIES)
def test_psd(family):
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = rng.integers(1, 16)
        X = rng.normal(size=(n, 2)) * rng.uniform(0.1, 3)
        K = kernel_matrix(KernelSpec(family, rng.uniform(0.2, 2), rng.uniform(0.5, 5)), X)
        np.testing.assert_allclose(K, K.T, atol=1e-12)
        assert np.linalg.eigvalsh(K).min() >= -1e-8 * np.mean(np.diag(K))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(FAMILIES), st.integers(0, 2**31 - 1),
       st.lists(st.floats(-50, 50), min_size=2, max_size=2))
def test_stationarity(family, seed, shift):
    rng = np.random.default_rng(seed)
    X, X2 = rng.normal(size=(5, 2)), rng.normal(size=(4, 2))
    spec = KernelSpec(family, 0.8, 1.3)
    shift = np.array(shift)
    np.testing.assert_allclose(kernel_matrix(spec, X + shift, X2 + shift), kernel_matrix(spec, X, X2),
                               atol=1e-12)


@pytest.mark.parametrize("family", FAMILIES)
def test_gradients_including_coincident_points(family):
    rng = np.random.default_rng(5)
    X = rng.normal(size=(4, 2))
    X[3] = X[0]  # r = 0 entry off the diagonal
    Z = rng.normal(size=(3, 2))
    W = rng.normal(size=(4, 3))
    Wsq = rng.normal(size=(4, 4))

    def f(p):
        spec = KernelSpec(family, ad.exp(p["ls"]), ad.exp(p["var"]))
        cross = ad.sum_(ad.mul(kernel_matrix(spec, p["X"], p["Z"]), W))
        return ad.add(cross, ad.sum_(ad.mul(kernel_matrix(spec, p["X"]), Wsq)))

    params = {"ls": np.array(np.log(0.9)), "var": np.array(np.log(1.4)), "X": X, "Z": Z}
    _, grads = ad.value_and_grad(f, params)
    h = 1e-6
    for name, v in params.items():
        for i in np.ndindex(v.shape):
            up = {k: np.array(a, copy=True) for k, a in params.items()}
            down = {k: np.array(a, copy=True) for k, a in params.items()}
            up[name][i] += h
            down[name][i] -= h
            fd = (float(f(up)) - float(f(down))) / (2 * h)
            assert grads[name][i] == pytest.approx(fd, rel=1e-5, abs=1e-7), (name, i)
