from __future__ import annotations

import math
from decimal import Decimal, getcontext
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ortho_group

from idminer.errors import DomainError, NonFiniteError, ShapeError, UsageError
from idminer.gradcheck import check_artifact_loss, check_end_to_end, check_identity_loss
from idminer.losses import (ContrastiveInstance, LossConfig, artifact_agnostic_loss, contrastive_loss,
                            identity_anchored_loss, info_nce, instances_from_roles, subsample_negatives,
                            total_loss)
from idminer.numcore import make_rng

TAU = 0.07


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def random_instance(rng, d=6, n_neg=4):
    rows = rng.normal(size=(2 + n_neg, d))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return ContrastiveInstance(rows[0], rows[1], rows[2:])


# -- fixtures


def test_no_negatives_is_exactly_zero():
    inst = ContrastiveInstance(unit([1, 2, 3]), unit([3, 2, 1]))
    assert info_nce(inst, TAU)[0] == 0.0


def test_matching_positive_one_orthogonal_negative():
    inst = ContrastiveInstance([1.0, 0.0], [1.0, 0.0], [[0.0, 1.0]])
    # 40-digit oracle for log(1 + e^(-1/tau))
    getcontext().prec = 40
    expected = float((Decimal(1) + (Decimal(-1) / Decimal("0.07")).exp()).ln())
    assert abs(info_nce(inst, TAU)[0] - expected) < 1e-9
    assert 6.2e-7 < expected < 6.3e-7


def test_symmetric_similarities_give_log2():
    q = np.array([1.0, 0.0, 0.0])
    kp = np.array([0.5, math.sqrt(0.75), 0.0])
    kn = np.array([0.5, 0.0, math.sqrt(0.75)])
    assert abs(info_nce(ContrastiveInstance(q, kp, [kn]), TAU)[0] - math.log(2)) < 1e-9


def test_errors():
    with pytest.raises(DomainError):
        info_nce(ContrastiveInstance([1.0, 0.0], [1.0, 0.0]), 0.0)
    with pytest.raises(ShapeError):
        ContrastiveInstance([1.0, 0.0], [1.0, 0.0, 0.0])
    with pytest.raises(ShapeError):
        ContrastiveInstance([1.0, 0.0], [1.0, 0.0], [[1.0, 0.0, 0.0]])
    with pytest.raises(DomainError):
        LossConfig(tau=-1.0)
    assert (LossConfig().tau, LossConfig().lam) == (0.07, 0.1)


# -- properties of a single instance


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6))
def test_info_nce_positive_with_any_negative(seed, n_neg):
    loss = info_nce(random_instance(make_rng(seed), n_neg=n_neg), TAU)[0]
    assert loss > 0.0 or loss == 0.0 and n_neg == 0


def test_info_nce_matches_direct_formula_at_high_precision():
    # oracle: exact rational arithmetic on a mild temperature, where nothing underflows
    rng = make_rng(3)
    inst = random_instance(rng, n_neg=5)
    tau = 0.5
    sims = [float(inst.query @ inst.positive)] + [float(inst.query @ k) for k in inst.negatives]
    e = [Fraction(math.exp(s / tau)) for s in sims]
    expected = -math.log(e[0] / sum(e))
    assert info_nce(inst, tau)[0] == pytest.approx(expected, abs=1e-12)


def test_decreases_as_positive_similarity_grows():
    q = np.array([1.0, 0.0, 0.0])
    negs = np.array([[0.2, math.sqrt(1 - 0.04), 0.0], [-0.3, 0.0, math.sqrt(1 - 0.09)]])
    losses = []
    for c in np.linspace(-0.9, 0.99, 25):
        kp = np.array([c, 0.0, -math.sqrt(1 - c * c)])
        losses.append(info_nce(ContrastiveInstance(q, kp, negs), TAU)[0])
    assert all(b < a for a, b in zip(losses, losses[1:]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_rotation_invariance(seed):
    rng = make_rng(seed)
    inst = random_instance(rng)
    r = ortho_group.rvs(6, random_state=seed % (2**32))
    rot = ContrastiveInstance(r @ inst.query, r @ inst.positive, inst.negatives @ r.T)
    assert abs(info_nce(inst, TAU)[0] - info_nce(rot, TAU)[0]) < 1e-9


def test_stable_at_extreme_logits():
    inst = ContrastiveInstance([1.0, 0.0], [-1.0, 0.0], [[1.0, 0.0]] * 3)
    loss = info_nce(inst, 1e-3)[0]
    assert np.isfinite(loss) and loss == pytest.approx(2000 + math.log(3), rel=1e-12)


# -- batched objectives


def test_batched_loss_equals_mean_of_instances():
    rng = make_rng(5)
    q = rng.normal(size=(6, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    cls = np.array([0, 0, 1, 1, 2, 2])
    pos = np.array([1, 0, 3, 2, 5, 4])
    neg = cls[:, None] != cls[None, :]
    loss, *_ = contrastive_loss(q, q, pos, neg, TAU)
    per = [info_nce(i, TAU)[0] for i in instances_from_roles(q, q, pos, neg)]
    assert loss == pytest.approx(np.mean(per), abs=1e-12)


def test_constant_embedding_gives_log_one_plus_n():
    n = 8
    emb = np.tile(unit([1, 2, 3, 4]), (n, 1))
    cls = np.repeat(np.arange(4), 2)
    neg = cls[:, None] != cls[None, :]
    art = artifact_agnostic_loss(emb, emb, neg, TAU)[0]
    assert art == pytest.approx(math.log(1 + 6), abs=1e-12)
    pos = np.array([1, 0, 3, 2, 5, 4, 7, 6])
    ident = identity_anchored_loss(emb, pos, neg, TAU)[0]
    assert ident == pytest.approx(math.log(1 + 6), abs=1e-12)


def test_instances_without_negatives_or_positive_are_usage_errors():
    q = np.tile(unit([1, 0]), (2, 1))
    with pytest.raises(UsageError):
        artifact_agnostic_loss(q, q, np.zeros((2, 2), dtype=bool), TAU)
    with pytest.raises(UsageError):
        artifact_agnostic_loss(q, q[:1], np.ones((2, 1), dtype=bool), TAU)
    with pytest.raises(UsageError):
        identity_anchored_loss(q, np.array([0, 0]), ~np.eye(2, dtype=bool), TAU)
    with pytest.raises(UsageError):
        identity_anchored_loss(q, np.array([1, 0]), np.ones((2, 2), dtype=bool), TAU)


def test_subsample_negatives_keeps_at_most_k():
    mask = np.ones((4, 10), dtype=bool)
    mask[:, 0] = False
    out = subsample_negatives(mask, 3, make_rng(0))
    assert np.all(out.sum(axis=1) == 3) and not np.any(out & ~mask)
    assert subsample_negatives(mask, None, make_rng(0)) is mask


def test_total_loss():
    assert total_loss(1.3, 5.0, 0.0) == 1.3
    assert total_loss(1.0, 2.0, 0.1) == pytest.approx(1.2, abs=1e-15)
    with pytest.raises(NonFiniteError):
        total_loss(float("nan"), 1.0)


@pytest.mark.parametrize("config", range(10))
def test_loss_gradients(config):
    assert check_artifact_loss(make_rng(config, "art"), TAU).ok
    assert check_identity_loss(make_rng(config, "id"), TAU).ok


@pytest.mark.parametrize("config", range(5))
def test_end_to_end_gradient(config):
    assert check_end_to_end(make_rng(config, "e2e"), TAU).ok
