"""Classification metrics and the evaluation report."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class EvalReport:
    """Accuracy, mean negative log predictive probability and a confusion table.

    ``confusion[i][j]`` counts points of true class ``classes[i]`` predicted
    as ``classes[j]``.
    """

    accuracy: float
    mean_nll: float
    n_test: int
    classes: list
    confusion: list
    runtime_seconds: float
    seed: int
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy must lie in [0, 1], got {self.accuracy}")
        if not self.mean_nll >= 0.0:
            raise ValueError(f"mean_nll must be nonnegative, got {self.mean_nll}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def loads(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def accuracy(probs, y_index) -> float:
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(y_index)))


def mean_nll(probs, y_index) -> float:
    """-(1/n) sum log p(true class); zero probabilities give inf."""
    y_index = np.asarray(y_index)
    p = np.asarray(probs, dtype=float)[np.arange(y_index.size), y_index]
    with np.errstate(divide="ignore"):
        return float(-np.mean(np.log(p)))


def confusion_matrix(probs, y_index, num_classes: int) -> np.ndarray:
    out = np.zeros((num_classes, num_classes), dtype=int)
    np.add.at(out, (np.asarray(y_index), np.argmax(probs, axis=1)), 1)
    return out


def evaluate_probs(probs, y_index, classes, runtime_seconds: float = 0.0, seed: int = 0,
                   extra=None) -> EvalReport:
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2 or probs.shape[0] != np.asarray(y_index).size:
        raise ValueError("probability rows and labels differ in number")
    return EvalReport(
        accuracy=accuracy(probs, y_index),
        mean_nll=max(mean_nll(probs, y_index), 0.0),
        n_test=int(probs.shape[0]),
        classes=list(classes),
        confusion=confusion_matrix(probs, y_index, probs.shape[1]).tolist(),
        runtime_seconds=float(runtime_seconds),
        seed=int(seed),
        extra=dict(extra or {}),
    )
