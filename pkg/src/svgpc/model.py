"""Sparse variational GP classifiers: state, ELBO, gradients, prediction, checkpoints."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .kernels import KernelSpec
from .numerics import GaussHermiteRule, gauss_hermite, kmeans
from .softmax import DEFAULT_PREDICT_SAMPLES, bound_terms, softmax_predict_batch
from .unified import (
    DEFAULT_DELTA,
    binary_predict_values,
    binary_terms,
    delta_max,
    multiclass_predict_batch,
    multiclass_S_terms,
    multiclass_terms,
)
from .variational import GaussianVariational, InducingSet, PredictiveMarginals, Projection

TASKS = ("binary", "multiclass", "softmax")
DEFAULT_JITTER = 1e-6
Q_SCALE_INIT = 0.1
CHECKPOINT_FORMAT = "svgpc-checkpoint/1"


class NonFiniteELBOError(FloatingPointError):
    pass


def _logit(p: float) -> float:
    return float(np.log(p) - np.log1p(-p))


@dataclass
class ModelState:
    """Everything needed to evaluate, train and predict with one classifier.

    ``params`` holds unconstrained arrays only: log lengthscales and
    variances, inducing locations ``Z``, variational means ``q_mu`` (L x m),
    raw scale factors ``q_sqrt`` (L x m x m, log diagonal) and, for the
    unified tasks, ``delta_logit``. The noise variance ``noise_a`` is a
    fixed attribute and never appears in ``params``.
    """

    task: str
    num_classes: int
    kernel_templates: list
    params: dict
    n_total: int
    noise_a: float | None = None
    trainable_delta: bool = True
    jitter: float = DEFAULT_JITTER
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "binary" and self.num_classes != 2:
            raise ValueError("binary task needs num_classes == 2")
        if self.task != "binary" and self.num_classes < 3:
            raise ValueError("multi-class tasks need at least three classes; use binary for two")
        if self.task == "softmax" and self.noise_a is not None:
            raise ValueError("the softmax task has no noise variance")
        if self.task != "softmax" and self.noise_a is None:
            raise ValueError("unified tasks need a noise variance")
        if len(self.kernel_templates) not in (1, self.num_latent):
            raise ValueError("need one shared kernel or one per latent function")

    @property
    def num_latent(self) -> int:
        return 1 if self.task == "binary" else self.num_classes

    @property
    def shared_kernel(self) -> bool:
        return len(self.kernel_templates) == 1

    @property
    def input_dim(self) -> int:
        return self.params["Z"].shape[1]

    @property
    def num_inducing(self) -> int:
        return self.params["Z"].shape[0]

    @property
    def delta_max(self) -> float:
        return delta_max(self.num_classes)

    # -- parameter views ----------------------------------------------------

    def kernel(self, k: int, params=None) -> KernelSpec:
        params = self.params if params is None else params
        template = self.kernel_templates[k]
        values = [
            (ad.exp(params[f"kernel{k}.{j}.log_lengthscale"]),
             ad.exp(params[f"kernel{k}.{j}.log_variance"]))
            for j in range(len(template.leaves()))
        ]
        return template.with_leaf_params(values)

    def kernels(self) -> list[KernelSpec]:
        spec = [self.kernel(k) for k in range(len(self.kernel_templates))]
        return [KernelSpec.from_dict(s.to_dict()) for s in spec]

    def delta(self, params=None):
        if self.task == "softmax":
            return None
        params = self.params if params is None else params
        return ad.mul(self.delta_max, ad.sigmoid(params["delta_logit"]))

    def q_u(self, latent: int) -> GaussianVariational:
        return GaussianVariational(self.params["q_mu"][latent], scale_from_raw(self.params["q_sqrt"][latent]))

    @property
    def inducing(self) -> InducingSet:
        return InducingSet(self.params["Z"])

    def copy(self) -> "ModelState":
        return ModelState(
            task=self.task, num_classes=self.num_classes,
            kernel_templates=list(self.kernel_templates),
            params={k: np.array(v, copy=True) for k, v in self.params.items()},
            n_total=self.n_total, noise_a=self.noise_a,
            trainable_delta=self.trainable_delta, jitter=self.jitter,
            metadata=json.loads(json.dumps(self.metadata)),
        )

    def trainable_names(self) -> list[str]:
        names = sorted(self.params)
        if not self.trainable_delta:
            names = [n for n in names if n != "delta_logit"]
        return names

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "task": self.task,
            "num_classes": self.num_classes,
            "noise_a": self.noise_a,
            "trainable_delta": self.trainable_delta,
            "jitter": self.jitter,
            "n_total": self.n_total,
            "kernels": [t.to_dict() for t in self.kernel_templates],
            "params": {k: _encode_array(v) for k, v in sorted(self.params.items())},
            "delta": None if self.task == "softmax" else float(self.delta()),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelState":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {d.get('format')!r}")
        return cls(
            task=d["task"], num_classes=int(d["num_classes"]),
            kernel_templates=[KernelSpec.from_dict(k) for k in d["kernels"]],
            params={k: _decode_array(v) for k, v in d["params"].items()},
            n_total=int(d["n_total"]), noise_a=d["noise_a"],
            trainable_delta=bool(d["trainable_delta"]), jitter=float(d["jitter"]),
            metadata=d.get("metadata", {}),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ModelState":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def _decode_array(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=float).reshape(d["shape"])


def scale_from_raw(raw):
    """Lower-triangular factor with an exponentiated diagonal."""
    m = ad.value(raw).shape[0]
    eye = np.eye(m)
    lower = np.tril(np.ones((m, m)), -1)
    return ad.add(ad.mul(raw, lower), ad.mul(ad.exp(ad.mul(raw, eye)), eye))


def raw_from_scale(scale: np.ndarray) -> np.ndarray:
    raw = np.tril(np.asarray(scale, dtype=float), -1)
    raw[np.diag_indices_from(raw)] = np.log(np.diag(scale))
    return raw


# -- construction -------------------------------------------------------------

def init_inducing(X, m: int, seed: int = 0) -> InducingSet:
    return InducingSet(kmeans(np.asarray(X, dtype=float), m, seed))


def default_kernel(family: str, input_dim: int) -> KernelSpec:
    return KernelSpec(family, 0.1 * np.sqrt(input_dim), 5.0)


def build_model(task: str, X, num_classes: int, kernel: KernelSpec | list | None = None,
                num_inducing: int = 32, seed: int = 0, noise_a: float | None = None,
                delta: float = DEFAULT_DELTA, trainable_delta: bool = True,
                shared_kernel: bool = True, jitter: float = DEFAULT_JITTER,
                Z=None) -> ModelState:
    """Fresh model: k-means inducing points, zero means, scale 0.1 chol(Kmm)."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    num_latent = 1 if task == "binary" else num_classes
    if kernel is None:
        kernel = default_kernel("rbf", d)
    if isinstance(kernel, KernelSpec):
        templates = [kernel] if shared_kernel else [kernel] * num_latent
    else:
        templates = list(kernel)
    if Z is None:
        Z = init_inducing(X, min(num_inducing, n), seed).Z
    Z = np.asarray(Z, dtype=float)
    m = Z.shape[0]

    params: dict[str, np.ndarray] = {"Z": Z.copy()}
    for k, template in enumerate(templates):
        for j, leaf in enumerate(template.leaves()):
            params[f"kernel{k}.{j}.log_lengthscale"] = np.array(np.log(float(leaf.lengthscale)))
            params[f"kernel{k}.{j}.log_variance"] = np.array(np.log(float(leaf.variance)))
    params["q_mu"] = np.zeros((num_latent, m))
    q_sqrt = np.empty((num_latent, m, m))
    for latent in range(num_latent):
        proj = Projection(templates[0 if len(templates) == 1 else latent], Z, None, jitter)
        q_sqrt[latent] = raw_from_scale(Q_SCALE_INIT * proj.L)
    params["q_sqrt"] = q_sqrt
    if task != "softmax":
        params["delta_logit"] = np.array(_logit(delta / delta_max(num_classes)))
    return ModelState(task=task, num_classes=num_classes, kernel_templates=templates,
                      params=params, n_total=n, noise_a=noise_a if task != "softmax" else None,
                      trainable_delta=trainable_delta, jitter=jitter)


# -- the bound ---------------------------------------------------------------

def _onehot(y, num_classes: int) -> np.ndarray:
    """Labels 1..C to an n x C indicator matrix."""
    idx = np.asarray(y, dtype=int) - 1
    if np.any(idx < 0) or np.any(idx >= num_classes):
        raise ValueError(f"labels must lie in 1..{num_classes}")
    out = np.zeros((idx.size, num_classes))
    out[np.arange(idx.size), idx] = 1.0
    return out


def _latent_terms(state: ModelState, params, X):
    """Stacked marginals (n x L) and the per-latent KL values."""
    projections = [Projection(state.kernel(k, params), params["Z"], X, state.jitter)
                   for k in range(len(state.kernel_templates))]
    mus, vars_, kls = [], [], []
    for latent in range(state.num_latent):
        proj = projections[0 if state.shared_kernel else latent]
        mean = ad.getitem(params["q_mu"], latent)
        scale = scale_from_raw(ad.getitem(params["q_sqrt"], latent))
        mu, var = proj.marginals(mean, scale)
        mus.append(mu)
        vars_.append(var)
        kls.append(proj.kl(mean, scale))
    return ad.stack(mus, axis=1), ad.stack(vars_, axis=1), kls


def data_terms(state: ModelState, params, mu, var, y, rule: GaussHermiteRule):
    """Per-point bound contributions for n x L marginals."""
    if state.task == "binary":
        yv = np.asarray(y, dtype=float)
        if not np.all(np.isin(yv, (-1.0, 1.0))):
            raise ValueError("binary labels must be -1 or +1")
        return binary_terms(yv, ad.getitem(mu, (slice(None), 0)),
                            ad.getitem(var, (slice(None), 0)), state.noise_a, state.delta(params))
    onehot = _onehot(y, state.num_classes)
    if state.task == "multiclass":
        S = multiclass_S_terms(onehot, mu, var, state.noise_a, rule)
        return multiclass_terms(S, state.delta(params), state.num_classes)
    return bound_terms(onehot, mu, var)


def elbo_terms(state: ModelState, params, X, y, rule: GaussHermiteRule | None = None):
    """(pointwise data terms, list of per-latent KL terms); tape-aware."""
    rule = rule or gauss_hermite()
    mu, var, kls = _latent_terms(state, params, np.asarray(X, dtype=float))
    return data_terms(state, params, mu, var, y, rule), kls


def elbo_objective(state: ModelState, params, X, y, rule: GaussHermiteRule | None = None):
    n_batch = np.asarray(X).shape[0]
    data, kls = elbo_terms(state, params, X, y, rule)
    total = ad.mul(state.n_total / n_batch, ad.sum_(data))
    for kl in kls:
        total = ad.sub(total, kl)
    return total


def elbo(state: ModelState, X, y, rule: GaussHermiteRule | None = None) -> float:
    """Minibatch ELBO estimate: (n_total / |batch|) * sum of point terms - sum of KLs."""
    return float(elbo_objective(state, state.params, X, y, rule))


def elbo_grad(state: ModelState, X, y, rule: GaussHermiteRule | None = None,
              names=None) -> tuple[float, dict]:
    """ELBO value and its gradient w.r.t. the unconstrained parameters in ``names``."""
    names = state.trainable_names() if names is None else list(names)
    free = {n: state.params[n] for n in names}
    fixed = {n: v for n, v in state.params.items() if n not in free}

    def fn(leaves):
        return elbo_objective(state, {**fixed, **leaves}, X, y, rule)

    return ad.value_and_grad(fn, free)


def diagnose_nonfinite(state: ModelState, X, y, rule=None) -> str:
    data, kls = elbo_terms(state, state.params, X, y, rule)
    data = np.asarray(data)
    parts = []
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        parts.append(f"data term non-finite at {bad.size} points (first index {bad[0]})")
    for latent, kl in enumerate(kls):
        if not np.isfinite(kl):
            parts.append(f"KL term of latent {latent} is {float(kl)}")
    for name, v in state.params.items():
        if not np.all(np.isfinite(v)):
            parts.append(f"parameter {name} is non-finite")
    return "; ".join(parts) or "non-finite value of unknown origin"


# -- prediction ---------------------------------------------------------------

def predict_marginals(state: ModelState, X_star, chunk: int = 2048) -> PredictiveMarginals:
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    if X_star.shape[1] != state.input_dim:
        raise ValueError(f"model expects {state.input_dim} input columns, got {X_star.shape[1]}")
    mus, vars_ = [], []
    for start in range(0, X_star.shape[0], chunk):
        mu, var, _ = _latent_terms(state, state.params, X_star[start:start + chunk])
        mus.append(mu)
        vars_.append(var)
    if not mus:
        L = state.num_latent
        return PredictiveMarginals(np.zeros((0, L)), np.zeros((0, L)))
    return PredictiveMarginals(np.vstack(mus), np.vstack(vars_))


def predict(state: ModelState, X_star, n_samples: int = DEFAULT_PREDICT_SAMPLES, seed: int = 0,
            rule: GaussHermiteRule | None = None):
    """Class probabilities (n x C; binary columns are [p(y=-1), p(y=+1)]) and marginals."""
    marg = predict_marginals(state, X_star)
    if state.task == "binary":
        mu, var, delta = marg.mu[:, 0], marg.var[:, 0], float(state.delta())
        # each side from its own CDF so both stay inside [delta, 1 - delta]
        probs = np.column_stack([binary_predict_values(-mu, var, state.noise_a, delta),
                                 binary_predict_values(mu, var, state.noise_a, delta)])
    elif state.task == "multiclass":
        probs = multiclass_predict_batch(marg.mu, marg.var, state.noise_a, float(state.delta()),
                                         rule or gauss_hermite())
    else:
        probs = softmax_predict_batch(marg.mu, marg.var, n_samples, seed)
    return probs, marg
