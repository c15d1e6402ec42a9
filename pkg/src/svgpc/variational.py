"""Inducing-point variational distributions, latent marginals and the Gaussian KL."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .kernels import KernelSpec, kernel_diag, kernel_matrix
from .numerics import CholeskyFactor, cholesky_jitter

VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class InducingSet:
    Z: np.ndarray

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        if Z.shape[0] < 1 or not np.all(np.isfinite(Z)):
            raise ValueError("inducing locations must be a non-empty finite matrix")
        object.__setattr__(self, "Z", Z)

    @property
    def m(self) -> int:
        return self.Z.shape[0]


@dataclass(frozen=True)
class GaussianVariational:
    """q(u) = N(mean, scale @ scale.T) with ``scale`` lower triangular."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        scale = np.asarray(self.scale, dtype=float)
        if scale.shape != (mean.size, mean.size):
            raise ValueError(f"scale must be {mean.size}x{mean.size}, got {scale.shape}")
        if np.any(np.triu(scale, 1) != 0):
            raise ValueError("scale must be lower triangular")
        if np.any(np.diag(scale) <= 0):
            raise ValueError("scale must have a positive diagonal")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @property
    def cov(self) -> np.ndarray:
        return self.scale @ self.scale.T


@dataclass(frozen=True)
class PredictiveMarginals:
    mu: np.ndarray
    var: np.ndarray


def factor(Kmm) -> object:
    """Differentiable Cholesky of Kmm using the escalation schedule for the jitter level."""
    jitter = cholesky_jitter(ad.value(Kmm)).jitter_used
    return ad.cholesky(Kmm, jitter)


class Projection:
    """Per-kernel quantities shared by every latent function that uses the kernel.

    Holds L = chol(Kmm) and A = L^{-1} Kmn so that, for any q(u) = N(m, Ls Ls^T),
    mu = A^T L^{-1} m and var = diag(Knn) - colsum(A^2) + colsum((Ls^T L^{-T} A)^2).
    """

    def __init__(self, kernel: KernelSpec, Z, X, jitter: float = 0.0):
        m = ad.value(Z).shape[0]
        Kmm = kernel_matrix(kernel, Z)
        if jitter:
            Kmm = ad.add(Kmm, jitter * np.eye(m))
        self.L = factor(Kmm)
        self.Kmm = Kmm
        if X is not None:
            Kmn = kernel_matrix(kernel, Z, X)
            self.A = ad.solve_triangular(self.L, Kmn)
            self.B = ad.solve_triangular(self.L, self.A, trans=True)  # Kmm^{-1} Kmn
            self.kdiag = kernel_diag(kernel, X)
            self.prior_var = ad.sub(self.kdiag, ad.sum_(ad.square(self.A), axis=0))

    def marginals(self, mean, scale):
        mu = ad.matmul(ad.transpose(self.B), mean)
        proj = ad.matmul(ad.transpose(scale), self.B)
        var = ad.add(self.prior_var, ad.sum_(ad.square(proj), axis=0))
        return mu, ad.maximum(var, VAR_FLOOR)

    def kl(self, mean, scale):
        return gaussian_kl(mean, scale, self.L)


def gaussian_kl(mean, scale, L):
    """KL(N(mean, scale scale^T) || N(0, L L^T)), differentiable in all arguments."""
    m = ad.value(mean).shape[0]
    alpha = ad.solve_triangular(L, mean)
    LinvS = ad.solve_triangular(L, scale)
    logdet_K = ad.mul(2.0, ad.sum_(ad.log(ad.diag_part(L))))
    logdet_S = ad.mul(2.0, ad.sum_(ad.log(ad.diag_part(scale))))
    trace = ad.sum_(ad.square(LinvS))
    maha = ad.sum_(ad.square(alpha))
    inner = ad.add(ad.add(ad.sub(logdet_K, logdet_S), trace), ad.sub(maha, float(m)))
    return ad.mul(0.5, inner)


def q_f_marginals(kernel: KernelSpec, Z: InducingSet, q_u: GaussianVariational, X,
                  jitter: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Marginal means and variances of q(f) at the rows of X."""
    Zv = Z.Z if isinstance(Z, InducingSet) else np.asarray(Z, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    proj = Projection(kernel, Zv, X, jitter)
    return proj.marginals(q_u.mean, q_u.scale)


def kl_gaussian(q_u: GaussianVariational, K_mm_chol: CholeskyFactor) -> float:
    L = K_mm_chol.lower if isinstance(K_mm_chol, CholeskyFactor) else np.asarray(K_mm_chol)
    return float(gaussian_kl(q_u.mean, q_u.scale, L))
