"""Minibatch stochastic optimization of the ELBO."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import ModelState, NonFiniteELBOError, diagnose_nonfinite, elbo, elbo_grad
from .numerics import DEFAULT_QUADRATURE_ORDER, gauss_hermite

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("iteration", "elbo", "wall_seconds", "delta", "grad_norm")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 10000
    batch_size: int = 1024
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    quadrature_order: int = DEFAULT_QUADRATURE_ORDER
    trace_every: int = 100
    optimizer: str = "adam"  # or "ascent": plain full-gradient ascent, a diagnostic
    record_wall_time: bool = False  # off keeps traces byte-reproducible
    freeze: tuple = ()

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.trace_every < 1:
            raise ValueError("trace_every must be at least 1")
        if self.optimizer not in ("adam", "ascent"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TraceRecord:
    iteration: int
    elbo: float
    wall_seconds: float
    delta: float
    grad_norm: float


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)

    def append(self, record: TraceRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("trace iterations must be strictly increasing")
        self.records.append(record)

    @property
    def elbos(self) -> np.ndarray:
        return np.array([r.elbo for r in self.records])

    def write_csv(self, path, header_lines=()) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            for r in self.records:
                writer.writerow([r.iteration, repr(r.elbo), repr(r.wall_seconds),
                                 repr(r.delta), repr(r.grad_norm)])


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()})


def adam_step(params: dict, grads: dict, moments: AdamState, t: int, cfg: TrainConfig):
    """One Adam update (minimizing; pass the gradient of the loss) with bias correction.

    Returns new parameter and moment dictionaries; inputs are left untouched.
    """
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * moments.m[name] + (1.0 - b1) * g
        v = b2 * moments.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[name] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, t)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        if batch_size >= n:
            yield None
        else:
            yield np.sort(rng.choice(n, size=batch_size, replace=False))


def fit(model: ModelState, X, y, cfg: TrainConfig, callback=None) -> tuple[ModelState, TrainTrace]:
    """Maximize the ELBO over hyperparameters, inducing inputs, q(u) and delta jointly.

    The input ``model`` is not modified. Raises ``NonFiniteELBOError`` with a
    diagnosis when the bound stops being finite.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.shape[0] < 1:
        raise ValueError("empty dataset")
    state = model.copy()
    state.n_total = X.shape[0]
    trace = TrainTrace()
    if cfg.iterations == 0:
        return state, trace

    rule = gauss_hermite(cfg.quadrature_order)
    names = [n for n in state.trainable_names()
             if not any(n == f or n.startswith(f + ".") for f in cfg.freeze)]
    rng = np.random.default_rng(cfg.seed)
    batches = _batches(X.shape[0], cfg.batch_size, rng)
    adam = AdamState.zeros_like({n: state.params[n] for n in names})
    start = time.perf_counter()

    for it in range(1, cfg.iterations + 1):
        idx = next(batches)
        Xb, yb = (X, y) if idx is None else (X[idx], y[idx])
        value, grads = elbo_grad(state, Xb, yb, rule, names)
        gnorm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        if not (np.isfinite(value) and np.isfinite(gnorm)):
            raise NonFiniteELBOError(
                f"non-finite ELBO at iteration {it}: {diagnose_nonfinite(state, Xb, yb, rule)}"
            )
        if it == 1 or it % cfg.trace_every == 0 or it == cfg.iterations:
            delta = float("nan") if state.task == "softmax" else float(state.delta())
            wall = time.perf_counter() - start if cfg.record_wall_time else 0.0
            trace.append(TraceRecord(it, value, wall, delta, gnorm))
            log.debug("iter %d elbo %.6g grad %.3g", it, value, gnorm)
            if callback is not None:
                callback(it, state, value)

        current = {n: state.params[n] for n in names}
        if cfg.optimizer == "adam":
            neg = {n: -g for n, g in grads.items()}
            updated, adam = adam_step(current, neg, adam, it, cfg)
        else:
            updated = {n: current[n] + cfg.learning_rate * grads[n] for n in names}
        state.params.update(updated)

    return state, trace


def full_elbo(model: ModelState, X, y, quadrature_order: int = DEFAULT_QUADRATURE_ORDER) -> float:
    return elbo(model, X, y, gauss_hermite(quadrature_order))


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["freeze"] = list(cfg.freeze)
    return d
