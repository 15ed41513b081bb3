"""Seeded finite-difference checks of every hand-written backward pass."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .losses import artifact_agnostic_loss, identity_anchored_loss
from .model import FrameEncoder, GRUAggregator, IDMiner, ModelConfig
from .numcore import ParamStore, gradient_check, make_rng

COMPONENTS = ("encoder", "gru_bptt", "artifact_loss", "identity_loss", "end_to_end")


@dataclass
class CheckResult:
    component: str
    config: int
    max_rel_error: float
    n_violations: int

    @property
    def ok(self) -> bool:
        return self.n_violations == 0

    def to_json(self) -> dict:
        return {"component": self.component, "config": self.config,
                "max_rel_error": self.max_rel_error, "ok": self.ok}


def _small_model_config(rng, fau_dim: int) -> ModelConfig:
    n_layers = int(rng.integers(1, 4))
    widths = tuple(int(w) for w in rng.integers(2, 6, size=n_layers))
    acts = tuple(str(a) for a in rng.choice(["tanh", "linear"], size=n_layers))
    return ModelConfig(fau_dim=fau_dim, encoder_widths=widths, encoder_activations=acts,
                       hidden=int(rng.integers(2, 6)), rep_dim=int(rng.integers(2, 5)),
                       input_mean=tuple(rng.normal(size=fau_dim)),
                       input_scale=tuple(rng.uniform(0.5, 2.0, size=fau_dim)),
                       update_bias=float(rng.uniform(-3.0, 0.0)))


def _unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _roles(rng, classes: int, per_class: int):
    """Video-level roles: positive shares the class, negatives are every other class."""
    cls = np.repeat(np.arange(classes), per_class)
    n = cls.size
    pos = np.array([rng.choice([j for j in range(n) if cls[j] == cls[i] and j != i]) for i in range(n)])
    return cls, pos, cls[:, None] != cls[None, :]


def check_encoder(rng, **kw):
    d = int(rng.integers(3, 7))
    cfg = _small_model_config(rng, d)
    store = ParamStore()
    enc = FrameEncoder(store, cfg)
    enc.init(rng)
    x = rng.normal(size=(int(rng.integers(2, 6)), d))
    w = rng.normal(size=(x.shape[0], cfg.embed_dim))

    def loss(_):
        return float(np.sum(w * enc.forward(x)[0]))

    store.zero_grad()
    y, cache = enc.forward(x)
    enc.backward(cache, w)
    return gradient_check(loss, store, **kw)


def check_gru(rng, **kw):
    e = int(rng.integers(2, 6))
    cfg = ModelConfig(fau_dim=e, encoder_widths=(e,), encoder_activations=("linear",),
                      hidden=int(rng.integers(2, 6)), rep_dim=int(rng.integers(2, 5)),
                      update_bias=float(rng.uniform(-3.0, 0.0)))
    store = ParamStore()
    agg = GRUAggregator(store, cfg)
    agg.init(rng)
    b, t = int(rng.integers(1, 4)), int(rng.integers(2, 8))
    x = rng.normal(size=(b, t, e))
    mask = np.ones((b, t), dtype=bool)
    for i in range(b):
        mask[i, int(rng.integers(1, t + 1)):] = False
    w = rng.normal(size=(b, cfg.rep_dim))

    def loss(_):
        return float(np.sum(w * agg.forward(x, mask)[0]))

    store.zero_grad()
    y, cache = agg.forward(x, mask)
    agg.backward(cache, w)
    return gradient_check(loss, store, **kw)


def check_artifact_loss(rng, tau, **kw):
    n, d = int(rng.integers(4, 9)), int(rng.integers(2, 6))
    store = ParamStore()
    store.add("q", _unit_rows(rng, n, d))
    store.add("k", _unit_rows(rng, n, d))
    cls = rng.integers(0, 3, size=n)
    cls[:3] = [0, 1, 2]
    neg = cls[:, None] != cls[None, :]

    def loss(s):
        return artifact_agnostic_loss(s["q"], s["k"], neg, tau)[0]

    store.zero_grad()
    _, dq, dk = artifact_agnostic_loss(store["q"], store["k"], neg, tau)
    store.accumulate("q", dq)
    store.accumulate("k", dk)
    return gradient_check(loss, store, **kw)


def check_identity_loss(rng, tau, **kw):
    _, pos, neg = _roles(rng, int(rng.integers(2, 4)), int(rng.integers(2, 4)))
    store = ParamStore()
    store.add("r", _unit_rows(rng, pos.size, int(rng.integers(2, 6))))

    def loss(s):
        return identity_anchored_loss(s["r"], pos, neg, tau)[0]

    store.zero_grad()
    _, d = identity_anchored_loss(store["r"], pos, neg, tau)
    store.accumulate("r", d)
    return gradient_check(loss, store, **kw)


def check_end_to_end(rng, tau, lam=0.1, **kw):
    """Total loss ``L_id + lam * L_art`` through encoder, GRU and both objectives."""
    d = int(rng.integers(3, 6))
    model = IDMiner(_small_model_config(rng, d), seed=int(rng.integers(1 << 30)))
    _, pos, neg = _roles(rng, 2, 2)
    seqs = [rng.normal(size=(int(rng.integers(2, 6)), d)) for _ in range(pos.size)]
    fq = rng.normal(size=(4, d))
    fk = fq + 0.1 * rng.normal(size=fq.shape)
    fneg = np.array([0, 0, 1, 1])[:, None] != np.array([0, 0, 1, 1])[None, :]

    def total(store):
        reps, _ = model.forward_sequences(seqs)
        l_id = identity_anchored_loss(reps, pos, neg, tau)[0]
        l_art = artifact_agnostic_loss(model.encoder.forward(fq)[0], model.encoder.forward(fk)[0], fneg, tau)[0]
        return l_id + lam * l_art

    model.store.zero_grad()
    reps, cache = model.forward_sequences(seqs)
    _, d_reps = identity_anchored_loss(reps, pos, neg, tau)
    model.backward_sequences(cache, d_reps)
    qe, qc = model.encoder.forward(fq)
    ke, kc = model.encoder.forward(fk)
    _, dq, dk = artifact_agnostic_loss(qe, ke, fneg, tau)
    model.encoder.backward(qc, lam * dq)
    model.encoder.backward(kc, lam * dk)
    return gradient_check(total, model.store, **kw)


def run_grad_checks(seed: int = 0, n_configs: int = 20, tau: float = 0.07, eps: float = 1e-5,
                    rel_tol: float = 1e-4) -> tuple[list[CheckResult], float]:
    """All components over ``n_configs`` seeded configurations; returns results and wall time."""
    t0 = time.perf_counter()
    kw = dict(eps=eps, rel_tol=rel_tol)
    checks = {
        "encoder": lambda r: check_encoder(r, **kw),
        "gru_bptt": lambda r: check_gru(r, **kw),
        "artifact_loss": lambda r: check_artifact_loss(r, tau, **kw),
        "identity_loss": lambda r: check_identity_loss(r, tau, **kw),
        "end_to_end": lambda r: check_end_to_end(r, tau, **kw),
    }
    results = []
    for c in range(n_configs):
        for comp in COMPONENTS:
            rep = checks[comp](make_rng(seed, "gradcheck", comp, c))
            results.append(CheckResult(comp, c, rep.worst, len(rep.violations)))
    return results, time.perf_counter() - t0
