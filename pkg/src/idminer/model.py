"""Frame encoder + GRU aggregator with hand-written backward passes.

Shapes: frames ``(N, D)``, frame embeddings ``(N, E)``, padded sequences
``(B, T, E)`` with a boolean mask, video representations ``(B, R)``. Both
embedding levels are L2-normalised inside the differentiable graph, so cosine
similarity is a plain dot product.
"""

from __future__ import annotations

import base64
import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IntegrityError, ShapeError, UsageError, VersionError, ConfigError
from .numcore import ParamStore, l2_normalize, l2_normalize_backward, make_rng

CHECKPOINT_FORMAT = "idminer-checkpoint"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("tanh", "linear", "relu")


@dataclass
class ModelConfig:
    fau_dim: int = 17
    encoder_widths: tuple[int, ...] = (32, 32, 32)
    encoder_activations: tuple[str, ...] = ("tanh", "tanh", "linear")
    hidden: int = 32
    rep_dim: int = 32
    t_max: int = 256
    input_mean: tuple[float, ...] | None = None
    input_scale: tuple[float, ...] | None = None
    center: bool = True
    update_bias: float = -5.0

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        self.encoder_activations = tuple(self.encoder_activations)
        if len(self.encoder_widths) != len(self.encoder_activations) or not self.encoder_widths:
            raise ConfigError("encoder_widths and encoder_activations must be nonempty and equally long")
        for a in self.encoder_activations:
            if a not in _ACTIVATIONS:
                raise ConfigError(f"unknown activation {a!r}")
        for name in ("input_mean", "input_scale"):
            v = getattr(self, name)
            if v is not None:
                v = tuple(float(x) for x in v)
                if len(v) != self.fau_dim:
                    raise ConfigError(f"{name} must have fau_dim entries")
                setattr(self, name, v)

    @property
    def embed_dim(self) -> int:
        return self.encoder_widths[-1]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        d["encoder_activations"] = list(self.encoder_activations)
        for k in ("input_mean", "input_scale"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _act(name, a):
    if name == "tanh":
        return np.tanh(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    return a


def _act_grad(name, a, h, g):
    if name == "tanh":
        return g * (1.0 - h * h)
    if name == "relu":
        return g * (a > 0)
    return g


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class FrameEncoder:
    """Per-frame MLP followed by unit normalisation."""

    def __init__(self, store: ParamStore, config: ModelConfig, prefix: str = "enc"):
        self.store = store
        self.config = config
        self.prefix = prefix
        self.dims = (config.fau_dim,) + config.encoder_widths
        self.mean = np.zeros(config.fau_dim) if config.input_mean is None else np.array(config.input_mean)
        self.scale = np.ones(config.fau_dim) if config.input_scale is None else np.array(config.input_scale)

    def init(self, rng: np.random.Generator) -> None:
        for i, (din, dout) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            self.store.add(f"{self.prefix}.W{i}", _uniform(rng, din, (din, dout)))
            self.store.add(f"{self.prefix}.b{i}", _uniform(rng, din, (dout,)))

    def forward(self, frames: np.ndarray):
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != self.config.fau_dim:
            raise ShapeError(f"encoder expects (N, {self.config.fau_dim}) frames, got {frames.shape}")
        h = (frames - self.mean) / self.scale
        acts = [h]
        pre = []
        for i, act in enumerate(self.config.encoder_activations):
            a = h @ self.store[f"{self.prefix}.W{i}"] + self.store[f"{self.prefix}.b{i}"]
            h = _act(act, a)
            pre.append(a)
            acts.append(h)
        y, norms = l2_normalize(h)
        return y, (acts, pre, y, norms)

    def backward(self, cache, grad_y: np.ndarray) -> None:
        if cache is None:
            raise UsageError("encoder backward called without a forward cache")
        acts, pre, y, norms = cache
        g = l2_normalize_backward(y, norms, grad_y)
        for i in reversed(range(len(pre))):
            g = _act_grad(self.config.encoder_activations[i], pre[i], acts[i + 1], g)
            self.store.accumulate(f"{self.prefix}.W{i}", acts[i].T @ g)
            self.store.accumulate(f"{self.prefix}.b{i}", g.sum(axis=0))
            if i:
                g = g @ self.store[f"{self.prefix}.W{i}"].T


class GRUAggregator:
    """Single-layer GRU from a zero state, unit-normalised projection of the last state.

    ``h_t = (1 - z_t) * h_{t-1} + z_t * tanh(W_h x_t + U_h (r_t * h_{t-1}) + b_h)``.
    Padded steps (mask False) carry the state through unchanged.
    """

    GATES = ("z", "r", "h")

    def __init__(self, store: ParamStore, config: ModelConfig, prefix: str = "gru"):
        self.store = store
        self.config = config
        self.prefix = prefix

    def init(self, rng: np.random.Generator) -> None:
        e, h, r = self.config.embed_dim, self.config.hidden, self.config.rep_dim
        p = self.prefix
        for g in self.GATES:
            self.store.add(f"{p}.W{g}", _uniform(rng, e, (e, h)))
            self.store.add(f"{p}.U{g}", _uniform(rng, h, (h, h)))
            bias = _uniform(rng, h, (h,))
            if g == "z":
                bias += self.config.update_bias   # negative: slow initial forgetting
            self.store.add(f"{p}.b{g}", bias)
        self.store.add(f"{p}.Wp", _uniform(rng, h, (h, r)))
        self.store.add(f"{p}.bp", _uniform(rng, h, (r,)))

    def _p(self, name):
        return self.store[f"{self.prefix}.{name}"]

    def forward(self, x: np.ndarray, mask: np.ndarray | None = None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.config.embed_dim:
            raise ShapeError(f"aggregator expects (B, T, {self.config.embed_dim}), got {x.shape}")
        b, t_len, _ = x.shape
        if t_len == 0:
            raise UsageError("aggregator needs at least one frame embedding")
        hd = self.config.hidden
        if mask is None:
            mask = np.ones((b, t_len), dtype=bool)
        w = np.concatenate([self._p("Wz"), self._p("Wr"), self._p("Wh")], axis=1)
        bias = np.concatenate([self._p("bz"), self._p("br"), self._p("bh")])
        u_zr = np.concatenate([self._p("Uz"), self._p("Ur")], axis=1)
        u_h = self._p("Uh")
        xp = x @ w + bias
        h = np.zeros((b, hd))
        hs, zs, rs, cands, rhs = [], [], [], [], []
        for t in range(t_len):
            zr = _sigmoid(xp[:, t, : 2 * hd] + h @ u_zr)
            z, r = zr[:, :hd], zr[:, hd:]
            rh = r * h
            cand = np.tanh(xp[:, t, 2 * hd:] + rh @ u_h)
            hn = h + z * (cand - h)
            hs.append(h)
            zs.append(z)
            rs.append(r)
            cands.append(cand)
            rhs.append(rh)
            h = np.where(mask[:, t:t + 1], hn, h)
        p = h @ self._p("Wp") + self._p("bp")
        y, norms = l2_normalize(p)
        cache = dict(x=x, mask=mask, hs=hs, zs=zs, rs=rs, cands=cands, rhs=rhs, h_last=h, y=y, norms=norms,
                     u_zr=u_zr, u_h=u_h, w=w)
        return y, cache

    def backward(self, cache, grad_y: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; returns the gradient w.r.t. the input sequence."""
        if cache is None:
            raise UsageError("aggregator backward called without a forward cache")
        hd = self.config.hidden
        x, mask = cache["x"], cache["mask"]
        b, t_len, _ = x.shape
        dp = l2_normalize_backward(cache["y"], cache["norms"], grad_y)
        self.store.accumulate(f"{self.prefix}.Wp", cache["h_last"].T @ dp)
        self.store.accumulate(f"{self.prefix}.bp", dp.sum(axis=0))
        dh = dp @ self._p("Wp").T
        u_zr, u_h = cache["u_zr"], cache["u_h"]
        dxp = np.zeros((b, t_len, 3 * hd))
        maskf = mask.astype(np.float64)
        for t in reversed(range(t_len)):
            m = maskf[:, t:t + 1]
            h_prev, z, r, cand = cache["hs"][t], cache["zs"][t], cache["rs"][t], cache["cands"][t]
            dhn = dh * m
            dz = dhn * (cand - h_prev)
            da_h = dhn * z * (1.0 - cand * cand)
            d_rh = da_h @ u_h.T
            da_z = dz * z * (1.0 - z)
            da_r = d_rh * h_prev * r * (1.0 - r)
            da_zr = np.concatenate([da_z, da_r], axis=1)
            dh = dh * (1.0 - m) + dhn * (1.0 - z) + d_rh * r + da_zr @ u_zr.T
            dxp[:, t, : 2 * hd] = da_zr
            dxp[:, t, 2 * hd:] = da_h
        hs = np.stack(cache["hs"])            # (T, B, H)
        rhs = np.stack(cache["rhs"])
        dzr = np.transpose(dxp[:, :, : 2 * hd], (1, 0, 2))
        dhc = np.transpose(dxp[:, :, 2 * hd:], (1, 0, 2))
        du_zr = np.tensordot(hs, dzr, axes=([0, 1], [0, 1]))
        du_h = np.tensordot(rhs, dhc, axes=([0, 1], [0, 1]))
        flat_x = x.reshape(-1, x.shape[2])
        flat_d = dxp.reshape(-1, 3 * hd)
        dw = flat_x.T @ flat_d
        db = flat_d.sum(axis=0)
        p = self.prefix
        for i, g in enumerate(self.GATES):
            sl = slice(i * hd, (i + 1) * hd)
            self.store.accumulate(f"{p}.W{g}", dw[:, sl])
            self.store.accumulate(f"{p}.b{g}", db[sl])
        self.store.accumulate(f"{p}.Uz", du_zr[:, :hd])
        self.store.accumulate(f"{p}.Ur", du_zr[:, hd:])
        self.store.accumulate(f"{p}.Uh", du_h)
        return dxp @ cache["w"].T


def subsample(frames: np.ndarray, t_max: int) -> np.ndarray:
    n = frames.shape[0]
    if n <= t_max:
        return frames
    idx = np.round(np.linspace(0, n - 1, t_max)).astype(int)
    return frames[idx]


def center_video(frames: np.ndarray) -> np.ndarray:
    """Remove the per-video mean of every AU channel (static appearance, baseline and pattern offsets)."""
    return frames - frames.mean(axis=0)


def pad_sequences(seqs: Sequence[np.ndarray]):
    lengths = np.array([s.shape[0] for s in seqs])
    if np.any(lengths == 0):
        raise UsageError("cannot aggregate an empty sequence")
    width = seqs[0].shape[1]
    out = np.zeros((len(seqs), lengths.max(), width))
    mask = np.zeros((len(seqs), lengths.max()), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        mask[i, : len(s)] = True
    return out, mask


class IDMiner:
    """Encoder E and aggregator M sharing one :class:`ParamStore`."""

    def __init__(self, config: ModelConfig | None = None, store: ParamStore | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        fresh = store is None
        self.store = store if store is not None else ParamStore()
        self.encoder = FrameEncoder(self.store, self.config)
        self.aggregator = GRUAggregator(self.store, self.config)
        if fresh:
            rng = make_rng(seed, "init")
            self.encoder.init(rng)
            self.aggregator.init(rng)

    def prepare(self, frames, subsample_to_t_max: bool = True) -> np.ndarray:
        """Frames as the encoder sees them: subsampled to ``t_max`` and, if configured, centred."""
        f = np.asarray(frames, dtype=np.float64)
        if subsample_to_t_max:
            f = subsample(f, self.config.t_max)
        return center_video(f) if self.config.center else f

    # -- training path
    def forward_sequences(self, frame_seqs: Sequence[np.ndarray]):
        """Representations for a batch of ``(T_i, D)`` arrays plus a cache for :meth:`backward_sequences`."""
        seqs = [self.prepare(f) for f in frame_seqs]
        lengths = [len(s) for s in seqs]
        emb, enc_cache = self.encoder.forward(np.concatenate(seqs))
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        x, mask = pad_sequences([emb[offsets[i]:offsets[i + 1]] for i in range(len(seqs))])
        reps, agg_cache = self.aggregator.forward(x, mask)
        return reps, dict(emb=emb, enc=enc_cache, agg=agg_cache, offsets=offsets, mask=mask)

    def backward_sequences(self, cache, grad_reps: np.ndarray, grad_emb: np.ndarray | None = None) -> None:
        dx = self.aggregator.backward(cache["agg"], grad_reps)
        demb = dx[cache["mask"]]
        if grad_emb is not None:
            demb = demb + grad_emb
        self.encoder.backward(cache["enc"], demb)

    # -- inference
    def embed_frames(self, frames: np.ndarray) -> np.ndarray:
        return self.encoder.forward(frames)[0]

    def represent(self, records, chunk: int = 128) -> np.ndarray:
        """Unit video representations, one row per record (frames arrays or VideoRecords)."""
        seqs = [getattr(r, "frames", r) for r in records]
        out = []
        for s in range(0, len(seqs), chunk):
            out.append(self.forward_sequences(seqs[s:s + chunk])[0])
        return np.concatenate(out) if out else np.zeros((0, self.config.rep_dim))


def encode_frame(model: IDMiner, frame) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1:
        raise ShapeError("encode_frame takes one frame vector")
    return model.encoder.forward(frame[None, :])[0][0]


def aggregate(model: IDMiner, embeddings) -> np.ndarray:
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] == 0:
        raise UsageError("aggregate needs a nonempty (T, E) list of embeddings")
    return model.aggregator.forward(emb[None])[0][0]


def forward_video(model: IDMiner, record) -> np.ndarray:
    return model.represent([record])[0]


# -- checkpoints -------------------------------------------------------------------------------


def _encode_array(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": base64.b64encode(a.astype("<f8").tobytes()).decode("ascii")}


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(obj["shape"])


def _digest(body: dict) -> str:
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def checkpoint_bytes(model: IDMiner, train_config: dict | None = None) -> bytes:
    st = model.store
    body = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "train_config": train_config or {},
        "step_count": st.step_count,
        "params": {k: _encode_array(v) for k, v in st.values.items()},
        "adam_m": {k: _encode_array(v) for k, v in st.adam_m.items()},
        "adam_v": {k: _encode_array(v) for k, v in st.adam_v.items()},
    }
    body["digest"] = _digest(body)
    return (json.dumps(body, sort_keys=True, indent=1) + "\n").encode("utf-8")


def load_checkpoint(source) -> tuple[IDMiner, dict]:
    """Returns ``(model, train_config)``; optimizer state and step count are restored."""
    if isinstance(source, (str, Path)):
        source = Path(source).read_bytes()
    try:
        body = json.loads(source)
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise IntegrityError("checkpoint is not valid JSON") from None
    if not isinstance(body, dict) or body.get("format") != CHECKPOINT_FORMAT:
        raise IntegrityError("not a checkpoint file")
    if body.get("version") != CHECKPOINT_VERSION:
        raise VersionError(f"checkpoint version {body.get('version')!r}, expected {CHECKPOINT_VERSION}")
    digest = body.pop("digest", None)
    if digest != _digest(body):
        raise IntegrityError("checkpoint digest mismatch")
    store = ParamStore(step_count=int(body["step_count"]))
    for name, obj in body["params"].items():
        store.add(name, _decode_array(obj))
        store.adam_m[name] = _decode_array(body["adam_m"][name]).copy()
        store.adam_v[name] = _decode_array(body["adam_v"][name]).copy()
    model = IDMiner(ModelConfig.from_dict(body["model_config"]), store)
    return model, body["train_config"]
