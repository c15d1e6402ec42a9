"""Gaussian additive-noise classification likelihoods (step, probit, logit).

The noise variance ``a`` selects the likelihood: 0 gives the step
likelihood, 1 the probit and 2.897 a Gaussian stand-in for the logit.
A small label-flip probability ``delta`` keeps every log finite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .numerics import GaussHermiteRule, gauss_hermite, std_normal_cdf

NOISE_VARIANCES = {"step": 0.0, "probit": 1.0, "logit": 2.897}
DEFAULT_DELTA = 1e-3
BINARY_DELTA_MAX = 0.25


def delta_max(num_classes: int) -> float:
    """Upper bound on delta: 0.25 for binary, min(0.25, (C-1)/C) otherwise."""
    if num_classes <= 2:
        return BINARY_DELTA_MAX
    return min(0.25, (num_classes - 1) / num_classes)


@dataclass(frozen=True)
class NoiseFamily:
    """Noise variance ``a`` (fixed, never optimized) plus the robust ``delta``."""

    a: float
    delta: float = DEFAULT_DELTA
    trainable_delta: bool = True
    num_classes: int = 2

    def __post_init__(self):
        if not self.a >= 0:
            raise ValueError(f"noise variance a must be nonnegative, got {self.a}")
        if not 0 < self.delta < self.delta_max:
            raise ValueError(f"delta must lie in (0, {self.delta_max}), got {self.delta}")

    @property
    def delta_max(self) -> float:
        return delta_max(self.num_classes)

    @classmethod
    def named(cls, name, **kwargs) -> "NoiseFamily":
        """Build from "step" | "probit" | "logit" or an explicit variance."""
        if isinstance(name, str):
            try:
                a = NOISE_VARIANCES[name.lower()]
            except KeyError:
                a = float(name)
        else:
            a = float(name)
        return cls(a=a, **kwargs)


# The functions below take (a, delta) separately so that delta can be a tape node.

def binary_terms(y, mu, var, a, delta):
    z = ad.div(ad.mul(y, mu), ad.sqrt(ad.add(var, a)))
    log_odds = ad.sub(ad.log1p(ad.neg(delta)), ad.log(delta))
    return ad.add(ad.mul(log_odds, ad.norm_cdf(z)), ad.log(delta))


def multiclass_S_terms(onehot, mu, var, a, rule: GaussHermiteRule):
    """S_i for every row: P(g_y > g_c for all c != y) by Gauss-Hermite over g_y.

    ``onehot`` is n x C, ``mu`` and ``var`` n x C. Returns an n-vector.
    """
    total = ad.add(var, a)
    mu_y = ad.sum_(ad.mul(mu, onehot), axis=1)
    total_y = ad.sum_(ad.mul(total, onehot), axis=1)
    g = ad.add(ad.reshape(mu_y, (-1, 1, 1)),
               ad.mul(ad.reshape(ad.sqrt(ad.mul(2.0, total_y)), (-1, 1, 1)),
                      rule.nodes[None, None, :]))
    n, C = onehot.shape
    z = ad.div(ad.sub(g, ad.reshape(mu, (n, C, 1))),
               ad.reshape(ad.sqrt(total), (n, C, 1)))
    logcdf = ad.mul(ad.log_norm_cdf(z), (1.0 - onehot)[:, :, None])
    prod = ad.exp(ad.sum_(logcdf, axis=1))  # n x Q
    return ad.matmul(prod, rule.weights / rule.weights.sum())


def multiclass_terms(S, delta, num_classes: int):
    wrong = ad.log(ad.div(delta, float(num_classes - 1)))
    right = ad.log1p(ad.neg(delta))
    return ad.add(ad.mul(right, S), ad.mul(wrong, ad.sub(1.0, S)))


# -- public per-point API ---------------------------------------------------

def binary_elbo_term(y, mu, var, nf: NoiseFamily):
    """Expected log robust step likelihood under g ~ N(mu, a + var)."""
    var = np.maximum(np.asarray(var, dtype=float), 0.0)
    return binary_terms(np.asarray(y, dtype=float), np.asarray(mu, dtype=float),
                        np.maximum(var, 1e-12), nf.a, nf.delta)


def binary_predict_values(mu_star, var_star, a: float, delta: float):
    var_star = np.maximum(np.asarray(var_star, dtype=float), 1e-12)
    z = np.asarray(mu_star, dtype=float) / np.sqrt(a + var_star)
    return np.clip((1.0 - 2.0 * delta) * std_normal_cdf(z) + delta, delta, 1.0 - delta)


def binary_predict(mu_star, var_star, nf: NoiseFamily):
    """p(y* = +1) = (1 - 2 delta) Phi(mu / sqrt(a + var)) + delta."""
    return binary_predict_values(mu_star, var_star, nf.a, nf.delta)


def _as_rows(mu, var):
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    var = np.maximum(np.atleast_2d(np.asarray(var, dtype=float)), 1e-12)
    return mu, var


def multiclass_S(y: int, mu, var, nf: NoiseFamily, rule: GaussHermiteRule | None = None) -> float:
    """Probability that the noisy latent of class ``y`` (0-based) beats all others."""
    rule = rule or gauss_hermite()
    mu, var = _as_rows(mu, var)
    C = mu.shape[1]
    if C < 2:
        raise ValueError("need at least two classes")
    onehot = np.zeros((1, C))
    onehot[0, y] = 1.0
    return float(np.clip(multiclass_S_terms(onehot, mu, var, nf.a, rule)[0], 0.0, 1.0))


def multiclass_elbo_term(S, nf: NoiseFamily, C: int):
    return multiclass_terms(np.asarray(S, dtype=float), nf.delta, C)


def multiclass_predict_batch(mu_star, var_star, a, delta, rule: GaussHermiteRule):
    """n x C predictive class probabilities from n x C latent marginals.

    The per-class S values sum to one only up to quadrature error (about
    1e-6 at order 20), so each row is renormalized.
    """
    mu, var = _as_rows(mu_star, var_star)
    n, C = mu.shape
    probs = np.empty((n, C))
    for c in range(C):
        onehot = np.zeros((n, C))
        onehot[:, c] = 1.0
        S = multiclass_S_terms(onehot, mu, var, a, rule)
        probs[:, c] = (1.0 - delta) * S + delta / (C - 1) * (1.0 - S)
    return probs / probs.sum(axis=1, keepdims=True)


def multiclass_predict(mu_star, var_star, nf: NoiseFamily, rule: GaussHermiteRule | None = None):
    rule = rule or gauss_hermite()
    return multiclass_predict_batch(mu_star, var_star, nf.a, nf.delta, rule)[0]


def delta_stationary(mu, var, y, nf: NoiseFamily) -> float:
    """delta maximizing the binary data term for fixed marginals: 1 - mean Phi(y mu / sqrt(a + var))."""
    mu, var, y = (np.asarray(v, dtype=float).reshape(-1) for v in (mu, var, y))
    if mu.size < 1:
        raise ValueError("need at least one point")
    z = y * mu / np.sqrt(nf.a + np.maximum(var, 1e-12))
    return float(1.0 - np.mean(std_normal_cdf(z)))
