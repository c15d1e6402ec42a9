"""Softmax likelihood via Gumbel noise augmentation.

With q(eps_i) = Gumbel(log theta_i, 1) the per-point bound is
-P/theta - log theta - 1/theta + 1, maximized at theta = P + 1, which leaves
-log(1 + P) with

    P = exp(var_y / 2 - mu_y) * sum_{c != y} exp(var_c / 2 + mu_c).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import autodiff as ad

DEFAULT_PREDICT_SAMPLES = 1000


@dataclass(frozen=True)
class SoftmaxBoundTerms:
    P: np.ndarray
    theta_opt: np.ndarray
    term: np.ndarray

    @classmethod
    def from_log_P(cls, log_P) -> "SoftmaxBoundTerms":
        log_P = np.asarray(log_P, dtype=float)
        P = np.exp(log_P)
        return cls(P=P, theta_opt=P + 1.0, term=-np.logaddexp(0.0, log_P))


def log_P_terms(onehot, mu, var):
    """log P_i for n x C marginals; overflow-safe through a masked log-sum-exp."""
    half = ad.mul(0.5, var)
    own = ad.sum_(ad.mul(ad.sub(half, mu), onehot), axis=1)
    others = ad.add(ad.add(half, mu), np.where(onehot > 0, -np.inf, 0.0))
    return ad.add(own, ad.logsumexp(others, axis=1))


def bound_terms(onehot, mu, var):
    """-log(1 + P_i) per point."""
    return ad.neg(ad.softplus(log_P_terms(onehot, mu, var)))


def softmax_P(y: int, mu, var) -> float:
    mu = np.asarray(mu, dtype=float).reshape(1, -1)
    var = np.maximum(np.asarray(var, dtype=float).reshape(1, -1), 0.0)
    if mu.shape[1] < 2:
        raise ValueError("need at least two classes")
    onehot = np.zeros_like(mu)
    onehot[0, y] = 1.0
    return float(np.exp(log_P_terms(onehot, mu, var)[0]))


def softmax_elbo_term(P) -> float:
    P = np.asarray(P, dtype=float)
    if np.any(P <= 0):
        raise ValueError("P must be positive")
    return -np.log1p(P)


def theta_bound(theta, P):
    """Per-point bound before substituting the optimal theta."""
    return -P / theta - np.log(theta) - 1.0 / theta + 1.0


def gumbel_kl(theta) -> float:
    """KL(Gumbel(log theta, 1) || Gumbel(0, 1)) = log theta + 1/theta - 1."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise ValueError("theta must be positive")
    return np.log(theta) + 1.0 / theta - 1.0


def standard_normal_draws(n_samples: int, num_classes: int, seed: int) -> np.ndarray:
    """n_samples x C standard normals from a counter-based (Philox) stream."""
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    return rng.standard_normal((n_samples, num_classes))


def softmax_predict_batch(mu_star, var_star, n_samples: int = DEFAULT_PREDICT_SAMPLES,
                          seed: int = 0, chunk: int = 256) -> np.ndarray:
    """Monte Carlo average of softmax(mu + sqrt(var) * t) for each row.

    The same draws t are reused for every row (common random numbers), so a
    point's estimate does not depend on which other points share the batch.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    mu = np.atleast_2d(np.asarray(mu_star, dtype=float))
    std = np.sqrt(np.maximum(np.atleast_2d(np.asarray(var_star, dtype=float)), 0.0))
    t = standard_normal_draws(n_samples, mu.shape[1], seed)
    out = np.empty_like(mu)
    for start in range(0, mu.shape[0], chunk):
        sl = slice(start, start + chunk)
        f = mu[sl, None, :] + std[sl, None, :] * t[None, :, :]
        out[sl] = special.softmax(f, axis=2).mean(axis=1)
    return out / out.sum(axis=1, keepdims=True)


def softmax_predict_mc(mu_star, var_star, n_samples: int = DEFAULT_PREDICT_SAMPLES,
                       seed: int = 0) -> np.ndarray:
    return softmax_predict_batch(mu_star, var_star, n_samples, seed)[0]
