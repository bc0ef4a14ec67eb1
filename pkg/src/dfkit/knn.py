"""k-nearest-neighbour classifier over z-scored blink feature vectors."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .blinks import BlinkFeatures
from .errors import EmptyTrainingSet, InvalidK, KTooLarge

REAL, FAKE = "REAL", "FAKE"


def _vec(x) -> np.ndarray:
    if isinstance(x, BlinkFeatures):
        return x.as_vector()
    return np.asarray(x, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class KnnModel:
    k: int
    means: np.ndarray
    stds: np.ndarray  # 0.0 marks a constant dimension, excluded from distances
    points: np.ndarray  # standardized, (n, d)
    labels: tuple[str, ...]

    def standardize(self, x) -> np.ndarray:
        x = _vec(x)
        active = self.stds > 0
        out = np.zeros_like(x, dtype=np.float64)
        out[..., active] = (x[..., active] - self.means[active]) / self.stds[active]
        return out

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "points": [{"x": p.tolist(), "label": lab} for p, lab in zip(self.points, self.labels)],
        }

    @classmethod
    def from_dict(cls, rec: dict) -> KnnModel:
        return cls(
            k=int(rec["k"]),
            means=np.asarray(rec["means"], dtype=np.float64),
            stds=np.asarray(rec["stds"], dtype=np.float64),
            points=np.asarray([p["x"] for p in rec["points"]], dtype=np.float64),
            labels=tuple(p["label"] for p in rec["points"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> KnnModel:
        with open(path) as f:
            return cls.from_dict(json.load(f))


def knn_fit(training, k: int = 5) -> KnnModel:
    """``training`` is a sequence of ``(features, label)`` with label REAL/FAKE
    (or 0/1, 1 meaning fake)."""
    if not training:
        raise EmptyTrainingSet("no training points")
    if k < 1 or k % 2 == 0:
        raise InvalidK(f"k must be a positive odd integer, got {k}")
    if k > len(training):
        raise KTooLarge(f"k={k} exceeds {len(training)} training points")
    X = np.stack([_vec(f) for f, _ in training])
    labels = tuple(_label(lab) for _, lab in training)
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds[np.ptp(X, axis=0) == 0] = 0.0
    model = KnnModel(k, means, stds, np.empty(0), labels)
    object.__setattr__(model, "points", model.standardize(X))
    return model


def _label(lab) -> str:
    if lab in (FAKE, 1, True):
        return FAKE
    if lab in (REAL, 0, False):
        return REAL
    raise ValueError(f"unknown label {lab!r}")


def knn_predict(model: KnnModel, query) -> tuple[str, float]:
    q = model.standardize(query)
    d = np.sqrt(((model.points - q) ** 2).sum(axis=1))
    # stable sort: equal distances keep insertion order
    nearest = np.argsort(d, kind="stable")[: model.k]
    n_fake = sum(model.labels[i] == FAKE for i in nearest)
    label = FAKE if 2 * n_fake > model.k else REAL
    return label, n_fake / model.k
