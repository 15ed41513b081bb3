"""AUC, accuracy and re-identification metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DomainError


def _scored(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape or s.ndim != 1 or s.size == 0:
        raise DomainError("scores and labels must be equal-length nonempty 1-D arrays")
    if not np.all(np.isin(y, (0, 1))):
        raise DomainError("labels must be 0 or 1")
    return s, y


def auc(scores, labels) -> float:
    """Mann-Whitney estimate ``P(s+ > s-) + 0.5 P(s+ == s-)`` via mid-ranks."""
    s, y = _scored(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    s, y = _scored(scores, labels)
    return float(np.count_nonzero((s >= threshold) == (y == 1)) / y.size)


def calibrated_accuracy(scores, labels) -> tuple[float, float]:
    """Best accuracy over all thresholds, returned with the smallest threshold achieving it.

    Candidate thresholds are the distinct scores plus ``inf`` (everything negative).
    """
    s, y = _scored(scores, labels)
    order = np.argsort(s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    uniq, first = np.unique(s_sorted, return_index=True)
    # predicting positive for scores >= uniq[i]: negatives below the cut are correct,
    # positives at/above the cut are correct
    neg_below = np.concatenate([[0], np.cumsum(1 - y_sorted)])[first]
    pos_at_or_above = y.sum() - np.concatenate([[0], np.cumsum(y_sorted)])[first]
    correct = np.concatenate([neg_below + pos_at_or_above, [np.count_nonzero(y == 0)]])
    thresholds = np.concatenate([uniq, [np.inf]])
    best = int(np.argmax(correct))
    return float(correct[best] / y.size), float(thresholds[best])


@dataclass
class ReidResult:
    rank1: float
    rank5: float
    mAP: float
    n_probes: int
    n_excluded: int = 0

    def to_json(self) -> dict:
        return {"rank1": self.rank1, "rank5": self.rank5, "map": self.mAP,
                "n_probes": self.n_probes, "n_excluded": self.n_excluded}


def rank_gallery(sim: np.ndarray) -> np.ndarray:
    """Gallery order by descending similarity, ties broken by ascending gallery index."""
    return np.lexsort((np.arange(sim.size), -sim))


def average_precision(relevant_sorted: np.ndarray) -> float:
    hits = np.flatnonzero(relevant_sorted)
    if hits.size == 0:
        return float("nan")
    return math.fsum((k + 1) / (r + 1) for k, r in enumerate(hits)) / hits.size


def reid_metrics(probe_reps, probe_labels: Sequence, gallery_reps, gallery_labels: Sequence,
                 ks: tuple[int, int] = (1, 5)) -> ReidResult:
    """Rank-1/Rank-5 hit rates and mAP under cosine similarity.

    Probes without any same-label gallery item are excluded (with a warning).
    """
    g = np.asarray(gallery_reps, dtype=np.float64)
    p = np.asarray(probe_reps, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] == 0:
        raise DomainError("reid needs a nonempty gallery")
    gl = np.asarray(gallery_labels)
    gn = g / np.linalg.norm(g, axis=1, keepdims=True)
    pn = p / np.linalg.norm(p, axis=1, keepdims=True)
    sims = pn @ gn.T
    hits = {k: 0 for k in ks}
    aps = []
    excluded = 0
    for i, label in enumerate(probe_labels):
        rel = gl == label
        if not rel.any():
            excluded += 1
            continue
        rel_sorted = rel[rank_gallery(sims[i])]
        first = int(np.argmax(rel_sorted))
        for k in ks:
            hits[k] += first < k
        aps.append(average_precision(rel_sorted))
    if excluded:
        warnings.warn(f"{excluded} probe(s) have no relevant gallery item and were excluded")
    n = len(aps)
    if n == 0:
        raise DomainError("no probe has a relevant gallery item")
    return ReidResult(hits[ks[0]] / n, hits[ks[1]] / n, math.fsum(aps) / n, n, excluded)


def avg_drop(conventional: float, rddp: Sequence[float]) -> float:
    """Mean relative change of the RDDP results against the conventional one (negative = drop)."""
    return float(np.mean([(r - conventional) / conventional for r in rddp]))
