"""InfoNCE objectives at frame and video level, and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NonFiniteError, ShapeError, UsageError


@dataclass
class LossConfig:
    tau: float = 0.07
    lam: float = 0.1

    def __post_init__(self):
        if self.tau <= 0:
            raise DomainError("tau must be > 0")
        if self.lam < 0:
            raise DomainError("lambda must be >= 0")


@dataclass
class ContrastiveInstance:
    query: np.ndarray
    positive: np.ndarray
    negatives: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        self.query = np.asarray(self.query, dtype=np.float64)
        self.positive = np.asarray(self.positive, dtype=np.float64)
        neg = np.asarray(self.negatives, dtype=np.float64)
        if neg.size == 0:
            neg = np.zeros((0, self.query.shape[0]))
        self.negatives = np.atleast_2d(neg)
        d = self.query.shape
        if self.positive.shape != d or self.negatives.shape[1] != d[0]:
            raise ShapeError("query, positive and negatives must share one dimension")


def info_nce(instance: ContrastiveInstance, tau: float = 0.07):
    """Loss and gradients ``(loss, d_query, d_positive, d_negatives)`` for one instance.

    ``-log(exp(q.k+/tau) / (exp(q.k+/tau) + sum_j exp(q.k-_j/tau)))`` evaluated
    as ``m + log1p(sum of the non-max terms) - q.k+/tau`` with ``m`` the max logit.
    """
    if tau <= 0:
        raise DomainError("tau must be > 0")
    q, kp, kn = instance.query, instance.positive, instance.negatives
    keys = np.vstack([kp[None, :], kn])
    logits = keys @ q / tau
    top = int(np.argmax(logits))
    shifted = np.exp(logits - logits[top])
    rest = shifted.sum() - shifted[top]
    loss = logits[top] - logits[0] + np.log1p(rest)
    probs = shifted / (1.0 + rest)
    coef = probs.copy()
    coef[0] -= 1.0
    d_q = coef @ keys / tau
    d_keys = np.outer(coef, q) / tau
    return max(float(loss), 0.0), d_q, d_keys[0], d_keys[1:]


def contrastive_loss(queries: np.ndarray, keys: np.ndarray, pos_index: np.ndarray,
                     neg_mask: np.ndarray, tau: float):
    """Mean InfoNCE over rows of ``queries``.

    Row ``i`` uses ``keys[pos_index[i]]`` as its positive and every key where
    ``neg_mask[i]`` is True as a negative. Returns ``(loss, dQ, dK, per_row)``.
    """
    if tau <= 0:
        raise DomainError("tau must be > 0")
    queries = np.asarray(queries, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    n = queries.shape[0]
    if queries.shape[1] != keys.shape[1]:
        raise ShapeError(f"query dim {queries.shape[1]} != key dim {keys.shape[1]}")
    if neg_mask.shape != (n, keys.shape[0]):
        raise ShapeError("neg_mask must be (n_queries, n_keys)")
    rows = np.arange(n)
    if np.any(neg_mask[rows, pos_index]):
        raise UsageError("a positive key is also marked as a negative")
    if not np.all(neg_mask.any(axis=1)):
        raise UsageError("every contrastive instance needs at least one negative")
    allowed = neg_mask.copy()
    allowed[rows, pos_index] = True
    logits = queries @ keys.T / tau
    masked = np.where(allowed, logits, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    e = np.where(allowed, np.exp(masked - m), 0.0)
    z = e.sum(axis=1, keepdims=True)
    per_row = (m[:, 0] + np.log(z[:, 0])) - logits[rows, pos_index]
    if not np.all(np.isfinite(per_row)):
        raise NonFiniteError("non-finite contrastive loss")
    coef = e / z
    coef[rows, pos_index] -= 1.0
    coef /= n * tau
    d_q = coef @ keys
    d_k = coef.T @ queries
    return float(per_row.mean()), d_q, d_k, per_row


def subsample_negatives(neg_mask: np.ndarray, k: int | None, rng: np.random.Generator) -> np.ndarray:
    """Keep at most ``k`` random negatives per row (``k=None`` keeps all)."""
    if k is None:
        return neg_mask
    out = np.zeros_like(neg_mask)
    for i, row in enumerate(neg_mask):
        idx = np.flatnonzero(row)
        if len(idx) > k:
            idx = rng.choice(idx, size=k, replace=False)
        out[i, idx] = True
    return out


def artifact_agnostic_loss(query_emb: np.ndarray, positive_emb: np.ndarray, neg_mask: np.ndarray, tau: float):
    """Frame level: row ``i`` of ``positive_emb`` is the positive for query ``i``; keys are the positives.

    Returns ``(loss, d_query_emb, d_positive_emb)``.
    """
    if query_emb.shape != positive_emb.shape:
        raise UsageError("each frame query needs exactly one index-aligned positive")
    n = query_emb.shape[0]
    loss, dq, dk, _ = contrastive_loss(query_emb, positive_emb, np.arange(n), neg_mask, tau)
    return loss, dq, dk


def identity_anchored_loss(reps: np.ndarray, pos_index: np.ndarray, neg_mask: np.ndarray, tau: float):
    """Video level: every representation is a query; keys are the same representations.

    Returns ``(loss, d_reps)``.
    """
    pos_index = np.asarray(pos_index)
    if np.any(pos_index < 0) or np.any(pos_index == np.arange(len(reps))):
        raise UsageError("each video query needs a positive other than itself")
    loss, dq, dk, _ = contrastive_loss(reps, reps, pos_index, neg_mask, tau)
    return loss, dq + dk


def total_loss(l_identity: float, l_artifact: float, lam: float = 0.1) -> float:
    if not (np.isfinite(l_identity) and np.isfinite(l_artifact)):
        raise NonFiniteError("total_loss needs finite components")
    return l_identity + lam * l_artifact


def instances_from_roles(queries, keys, pos_index, neg_mask) -> list[ContrastiveInstance]:
    """Explicit per-row instances; used to cross-check the batched path."""
    return [ContrastiveInstance(queries[i], keys[pos_index[i]], keys[neg_mask[i]]) for i in range(len(queries))]
