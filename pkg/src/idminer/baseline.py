"""Appearance/artifact-reliant reference detector: logistic regression on mean frame features.

It sees only the per-video average FAU vector, which carries the displayed
face's offset and the deepfake pattern but almost nothing of the action
dynamics. It is the foil for the identity-anchored model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.linear_model import LogisticRegression

from . import data as D
from .errors import CapabilityError, UsageError
from .protocols import REFERENCE_FREE, EvaluationPair


def mean_features(records) -> np.ndarray:
    return np.stack([np.asarray(r.frames, dtype=np.float64).mean(axis=0) for r in records])


@dataclass
class MeanFeatureClassifier:
    mean: np.ndarray
    scale: np.ndarray
    coef: np.ndarray
    intercept: float

    supports = (REFERENCE_FREE,)

    def standardize(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.mean) / self.scale

    def predict_proba(self, records) -> np.ndarray:
        """Probability of being genuine."""
        z = self.standardize(mean_features(records)) @ self.coef + self.intercept
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    def represent(self, records) -> np.ndarray:
        """Standardised mean features, used as the re-id embedding."""
        return self.standardize(mean_features(records))

    def score(self, dataset: D.Dataset, pairs: list[EvaluationPair]) -> np.ndarray:
        if any(p.reference is not None for p in pairs):
            raise CapabilityError("the mean-feature classifier scores single videos only")
        return self.predict_proba([dataset.get(p.probe) for p in pairs])

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "coef": self.coef.tolist(), "intercept": self.intercept}

    @classmethod
    def from_json(cls, obj: dict) -> "MeanFeatureClassifier":
        return cls(np.asarray(obj["mean"]), np.asarray(obj["scale"]), np.asarray(obj["coef"]),
                   float(obj["intercept"]))


def fit_baseline(dataset: D.Dataset, split: str = "train", c: float = 1.0) -> MeanFeatureClassifier:
    """Fit genuine (1) against forged (0) videos of ``split``."""
    pos = dataset.records(split=split, tag=D.GENUINE)
    neg = dataset.records(split=split, tag=D.FORGED)
    if not pos or not neg:
        raise UsageError(f"baseline needs genuine and forged videos in the {split} split")
    x = mean_features(pos + neg)
    y = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    lr = LogisticRegression(C=c, max_iter=1000).fit((x - mu) / sd, y)
    return MeanFeatureClassifier(mu, sd, lr.coef_[0].copy(), float(lr.intercept_[0]))
