"""Shared numerical primitives: jittered Cholesky, Gauss-Hermite rules,
distribution functions and k-means."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as la
from scipy import special

JITTER_SCHEDULE = (0.0, 1e-8, 1e-6, 1e-4, 1e-2)
DEFAULT_QUADRATURE_ORDER = 20
KMEANS_MAX_ITER = 100


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a kernel matrix cannot be factorized even with jitter."""


@dataclass(frozen=True)
class CholeskyFactor:
    lower: np.ndarray
    jitter_used: float


@dataclass(frozen=True)
class GaussHermiteRule:
    """Physicists' Gauss-Hermite rule for the weight exp(-x^2)."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def expect(self, fn, mean, var):
        """Approximate E[fn(x)] for x ~ N(mean, var) (broadcast over a trailing node axis)."""
        mean = np.asarray(mean, dtype=float)[..., None]
        std = np.sqrt(2.0 * np.asarray(var, dtype=float))[..., None]
        values = fn(mean + std * self.nodes)
        return values @ self.weights / np.sqrt(np.pi)


def jitter_levels(A: np.ndarray) -> list[float]:
    scale = float(np.mean(np.diag(A)))
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    return [j * scale for j in JITTER_SCHEDULE]


def cholesky_jitter(A, max_attempts: int = len(JITTER_SCHEDULE)) -> CholeskyFactor:
    """Lower Cholesky factor of ``A`` with the smallest workable diagonal jitter.

    Jitter escalates through ``JITTER_SCHEDULE`` scaled by the mean diagonal.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {A.shape}")
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(A).max())):
        raise ValueError("matrix is not symmetric")
    eye = np.eye(A.shape[0])
    for jitter in jitter_levels(A)[:max_attempts]:
        try:
            L = la.cholesky(A + jitter * eye, lower=True, check_finite=True)
        except (la.LinAlgError, ValueError):
            continue
        if np.all(np.diag(L) > 0):
            return CholeskyFactor(L, jitter)
    raise FactorizationError(
        f"cholesky failed after {max_attempts} jitter attempts "
        f"(mean diagonal {np.mean(np.diag(A)):.3g}); kernel hyperparameters are "
        "likely badly conditioned"
    )


@lru_cache(maxsize=None)
def _gauss_hermite(order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_hermite(order: int = DEFAULT_QUADRATURE_ORDER) -> GaussHermiteRule:
    if not 1 <= int(order) <= 128:
        raise ValueError(f"quadrature order must lie in [1, 128], got {order}")
    nodes, weights = _gauss_hermite(int(order))
    return GaussHermiteRule(int(order), nodes, weights)


def std_normal_cdf(x):
    return special.ndtr(x)


def log_std_normal_cdf(x):
    # log_ndtr switches to an asymptotic series in the far lower tail
    return special.log_ndtr(x)


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def logistic_cdf(x):
    return special.expit(x)


def gumbel_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-x - np.exp(-x))


def gumbel_cdf(x):
    return np.exp(-np.exp(-np.asarray(x, dtype=float)))


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(points**2, axis=1)[:, None]
        + np.sum(centers**2, axis=1)[None, :]
        - 2.0 * points @ centers.T
    )
    return np.maximum(d2, 0.0)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = _sq_dists(points, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than k; fall back to unused rows
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers[j] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centers[j : j + 1])[:, 0])
    return centers


def kmeans(points, k: int, seed: int = 0, max_iter: int = KMEANS_MAX_ITER,
           return_history: bool = False):
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are reseeded to the point farthest from its assigned
    center. With ``return_history`` the per-iteration objective is returned
    as well.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    if k == n:
        centers = points[rng.permutation(n)].copy()
        return (centers, [0.0]) if return_history else centers

    centers = _kmeans_pp(points, k, rng)
    assign = None
    history = []
    for _ in range(max_iter):
        d2 = _sq_dists(points, centers)
        new_assign = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(n), new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        dist_own = d2[np.arange(n), assign]
        for j in range(k):
            members = assign == j
            if members.any():
                centers[j] = points[members].mean(axis=0)
            else:
                far = int(np.argmax(dist_own))
                centers[j] = points[far]
                assign[far] = j
                dist_own[far] = 0.0
    # final centers are exact means of the final clusters
    d2 = _sq_dists(points, centers)
    assign = np.argmin(d2, axis=1)
    for j in range(k):
        members = assign == j
        if members.any():
            centers[j] = points[members].mean(axis=0)
    if return_history:
        history.append(float(_sq_dists(points, centers)[np.arange(n), assign].sum()))
        return centers, history
    return centers
