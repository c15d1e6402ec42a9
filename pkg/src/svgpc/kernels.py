"""Stationary isotropic covariance functions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

FAMILIES = ("rbf", "matern32", "matern52", "sum")
_ALIASES = {
    "rbf": "rbf", "se": "rbf", "squaredexponential": "rbf",
    "matern32": "matern32", "matern3/2": "matern32",
    "matern52": "matern52", "matern5/2": "matern52",
    "sum": "sum",
}

SQRT3 = np.sqrt(3.0)
SQRT5 = np.sqrt(5.0)


def canonical_family(name: str) -> str:
    key = name.strip().lower().replace("_", "").replace("-", "").replace("é", "e")
    try:
        return _ALIASES[key]
    except KeyError:
        raise ValueError(f"unknown kernel family {name!r}; expected one of {FAMILIES}") from None


@dataclass(frozen=True)
class KernelSpec:
    """Covariance family plus hyperparameters for one latent function.

    ``lengthscale`` and ``variance`` may also be tape nodes while an ELBO is
    being differentiated.
    """

    family: str
    lengthscale: object = 1.0
    variance: object = 1.0
    children: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "family", canonical_family(self.family))
        if self.family == "sum":
            if len(self.children) < 2:
                raise ValueError("a sum kernel needs at least two children")
            object.__setattr__(self, "children", tuple(self.children))
            return
        for name in ("lengthscale", "variance"):
            v = getattr(self, name)
            if not ad.is_var(v) and not float(v) > 0:
                raise ValueError(f"{name} must be positive, got {v}")

    @classmethod
    def sum(cls, *children: "KernelSpec") -> "KernelSpec":
        return cls("sum", None, None, tuple(children))

    def leaves(self) -> list["KernelSpec"]:
        if self.family == "sum":
            return [leaf for child in self.children for leaf in child.leaves()]
        return [self]

    def with_leaf_params(self, params) -> "KernelSpec":
        """Rebuild with ``(lengthscale, variance)`` pairs in ``leaves()`` order."""
        params = iter(params)

        def rebuild(spec):
            if spec.family == "sum":
                return KernelSpec.sum(*(rebuild(c) for c in spec.children))
            ls, var = next(params)
            return KernelSpec(spec.family, ls, var)

        return rebuild(self)

    def to_dict(self) -> dict:
        if self.family == "sum":
            return {"family": "sum", "children": [c.to_dict() for c in self.children]}
        return {"family": self.family, "lengthscale": float(ad.value(self.lengthscale)),
                "variance": float(ad.value(self.variance))}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        if d["family"] == "sum":
            return cls.sum(*(cls.from_dict(c) for c in d["children"]))
        return cls(d["family"], float(d["lengthscale"]), float(d["variance"]))


def _profile(family: str, s: np.ndarray):
    """Unit-variance kernel value and its derivative w.r.t. the scaled squared distance s = r^2/l^2."""
    if family == "rbf":
        k = np.exp(-0.5 * s)
        return k, -0.5 * k
    r = np.sqrt(s)
    if family == "matern32":
        e = np.exp(-SQRT3 * r)
        return (1.0 + SQRT3 * r) * e, -1.5 * e
    if family == "matern52":
        e = np.exp(-SQRT5 * r)
        return (1.0 + SQRT5 * r + 5.0 / 3.0 * s) * e, -5.0 / 6.0 * (1.0 + SQRT5 * r) * e
    raise ValueError(family)


def _stationary(family, lengthscale, variance, X, X2):
    Xv, X2v = ad.value(X), ad.value(X2)
    ls, var = ad.value(lengthscale), ad.value(variance)
    diff = Xv[:, None, :] - X2v[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    s = d2 / ls**2
    unit, dunit = _profile(family, s)
    K = var * unit
    dK_ds = var * dunit

    def vjp_X(g):
        w = g * dK_ds * (2.0 / ls**2)
        return np.einsum("ij,ijk->ik", w, diff)

    def vjp_X2(g):
        w = g * dK_ds * (2.0 / ls**2)
        return -np.einsum("ij,ijk->jk", w, diff)

    def vjp_ls(g):
        return np.sum(g * dK_ds * (-2.0 * s / ls))

    def vjp_var(g):
        return np.sum(g * unit)

    return ad._node(K, (X, vjp_X), (X2, vjp_X2), (lengthscale, vjp_ls), (variance, vjp_var))


def kernel_matrix(spec: KernelSpec, X, X2=None):
    """Cross-covariance matrix k(X, X2); differentiable in inputs and hyperparameters."""
    if X2 is None:
        X2 = X
    if ad.value(X).ndim != 2 or ad.value(X2).ndim != 2:
        raise ValueError("inputs must be 2-D arrays")
    if ad.value(X).shape[1] != ad.value(X2).shape[1]:
        raise ValueError(
            f"dimension mismatch: X has {ad.value(X).shape[1]} columns, X2 has {ad.value(X2).shape[1]}"
        )
    if spec.family == "sum":
        out = kernel_matrix(spec.children[0], X, X2)
        for child in spec.children[1:]:
            out = ad.add(out, kernel_matrix(child, X, X2))
        return out
    return _stationary(spec.family, spec.lengthscale, spec.variance, X, X2)


def kernel_diag(spec: KernelSpec, X):
    """Diagonal of k(X, X) without forming the matrix (stationary kernels: the variance)."""
    n = ad.value(X).shape[0]
    if spec.family == "sum":
        out = kernel_diag(spec.children[0], X)
        for child in spec.children[1:]:
            out = ad.add(out, kernel_diag(child, X))
        return out
    return ad.mul(spec.variance, np.ones(n))
