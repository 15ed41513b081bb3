from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from idminer.errors import DomainError, NonFiniteError, ShapeError
from idminer.numcore import (ParamStore, adam_step, cosine_similarity, derive_seed, gradient_check,
                             l2_normalize, l2_normalize_backward, make_rng)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_derive_seed_is_stable_and_key_sensitive():
    assert derive_seed(7, "video", "a") == derive_seed(7, "video", "a")
    assert derive_seed(7, "video", "a") != derive_seed(7, "video", "b")
    assert derive_seed(7, "ab") != derive_seed(7, "a", "b")
    assert 0 <= derive_seed(123, 4) < 2**63


def test_make_rng_streams_reproduce():
    a = make_rng(5, "x").normal(size=8)
    b = make_rng(5, "x").normal(size=8)
    c = make_rng(5, "y").normal(size=8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_cosine_examples():
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-15)
    assert cosine_similarity([1, 1], [-1, -1]) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(ShapeError):
        cosine_similarity([1, 2], [1, 2, 3])
    with pytest.raises(DomainError):
        cosine_similarity([0, 0], [1, 2])


@given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite))
def test_cosine_bounded_and_symmetric(u, v):
    if np.linalg.norm(u) < 1e-6 or np.linalg.norm(v) < 1e-6:
        return
    c = cosine_similarity(u, v)
    assert -1.0 <= c <= 1.0
    assert c == pytest.approx(cosine_similarity(v, u), abs=1e-12)


@given(arrays(np.float64, (3, 4), elements=finite))
def test_l2_normalize_gives_unit_rows(x):
    if np.any(np.linalg.norm(x, axis=1) < 1e-6):
        return
    y, _ = l2_normalize(x)
    assert np.allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-12)


def test_l2_normalize_rejects_zero_row():
    with pytest.raises(DomainError):
        l2_normalize(np.zeros((1, 3)))


def test_l2_normalize_backward_matches_finite_differences():
    rng = make_rng(0)
    store = ParamStore()
    store.add("x", rng.normal(size=(3, 4)))
    w = rng.normal(size=(3, 4))

    def loss(s):
        return float(np.sum(w * l2_normalize(s["x"])[0]))

    y, n = l2_normalize(store["x"])
    store.accumulate("x", l2_normalize_backward(y, n, w))
    assert gradient_check(loss, store).ok


def test_adam_first_step_matches_formula():
    # bias correction makes the first step lr * g / (|g| + eps) elementwise
    store = ParamStore()
    store.add("w", [1.0, -2.0, 0.5])
    g = np.array([0.3, -4.0, 1e-3])
    store.accumulate("w", g)
    adam_step(store, lr=0.01)
    expected = np.array([1.0, -2.0, 0.5]) - 0.01 * g / (np.abs(g) + 1e-8)
    assert np.allclose(store["w"], expected, rtol=0, atol=1e-15)
    assert store.step_count == 1
    assert np.all(store.grads["w"] == 0)


def test_adam_two_steps_hand_computed():
    b1, b2, lr, eps = 0.9, 0.999, 1e-3, 1e-8
    store = ParamStore()
    store.add("w", [0.0])
    w, m, v = 0.0, 0.0, 0.0
    for t, g in enumerate((1.0, -3.0), start=1):
        store.accumulate("w", np.array([g]))
        adam_step(store, lr, b1, b2, eps)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    assert store["w"][0] == pytest.approx(w, abs=1e-15)


def test_adam_rejects_non_finite_gradient():
    store = ParamStore()
    store.add("enc.W0", [1.0, 2.0])
    store.accumulate("enc.W0", np.array([np.nan, 0.0]))
    with pytest.raises(NonFiniteError, match="enc.W0"):
        adam_step(store)
    assert store["enc.W0"].tolist() == [1.0, 2.0]


def test_param_store_duplicate_and_copy():
    store = ParamStore()
    store.add("a", [1.0])
    with pytest.raises(KeyError):
        store.add("a", [2.0])
    c = store.copy()
    c["a"][0] = 5.0
    assert store["a"][0] == 1.0
    assert store.num_scalars() == 1


def test_gradient_check_quadratic_passes_and_wrong_gradient_fails():
    store = ParamStore()
    store.add("p", [0.3, -1.2, 2.0])

    def loss(s):
        return float(np.sum(s["p"] ** 2))

    store.accumulate("p", 2 * store["p"])
    rep = gradient_check(loss, store)
    assert rep.ok and rep.worst < 1e-8

    store.zero_grad()
    store.accumulate("p", 2 * store["p"] + np.array([0.0, 0.1, 0.0]))
    rep = gradient_check(loss, store)
    assert not rep.ok
    assert [v[1] for v in rep.violations] == [(1,)]


def test_gradient_check_constant_loss():
    store = ParamStore()
    store.add("p", [1.0, 2.0])
    assert gradient_check(lambda s: 3.0, store).worst == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_gradient_check_leaves_parameters_untouched(seed):
    rng = make_rng(seed)
    store = ParamStore()
    store.add("p", rng.normal(size=4))
    before = store["p"].copy()
    store.accumulate("p", np.cos(store["p"]))
    gradient_check(lambda s: float(np.sum(np.sin(s["p"]))), store)
    assert np.array_equal(store["p"], before)
