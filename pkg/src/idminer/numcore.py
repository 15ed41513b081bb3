"""Dense float64 arithmetic helpers, seeded RNG, Adam and finite-difference checks.

Arrays are plain ``numpy.ndarray`` objects with ``dtype=float64``. Randomness
always comes from ``numpy.random.Generator`` backed by PCG64 (a fixed,
documented, platform-independent bit generator), seeded through
:func:`make_rng`. Sub-streams are derived by hashing string keys with BLAKE2b
so that results never depend on Python's salted ``hash``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import DomainError, NonFiniteError, ShapeError

__all__ = [
    "ParamStore",
    "GradCheckReport",
    "adam_step",
    "cosine_similarity",
    "derive_seed",
    "gradient_check",
    "make_rng",
    "l2_normalize",
    "l2_normalize_backward",
]


def derive_seed(master: int, *keys) -> int:
    """Stable 63-bit seed from a master seed and any number of str/int keys."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for k in keys:
        h.update(b"\x1f")
        h.update(str(k).encode())
    return int.from_bytes(h.digest(), "little") >> 1


def make_rng(seed: int, *keys) -> np.random.Generator:
    """PCG64 generator; extra ``keys`` select an independent derived stream."""
    if keys:
        seed = derive_seed(seed, *keys)
    return np.random.Generator(np.random.PCG64(int(seed)))


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape or u.size == 0:
        raise ShapeError(f"cosine_similarity needs equal-length vectors, got {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DomainError("cosine_similarity is undefined for a zero vector")
    c = float(np.dot(u / nu, v / nv))
    return min(1.0, max(-1.0, c))


def l2_normalize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise unit normalisation; returns ``(y, norms)`` with norms kept for backward."""
    norms = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    if np.any(norms == 0.0):
        raise DomainError("cannot normalise a zero vector")
    return x / norms, norms


def l2_normalize_backward(y: np.ndarray, norms: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    # d(x/|x|) = (g - y (y.g)) / |x|
    return (grad_y - y * np.sum(y * grad_y, axis=-1, keepdims=True)) / norms


@dataclass
class ParamStore:
    """Named parameters with paired gradient buffers and Adam moments."""

    values: dict[str, np.ndarray] = field(default_factory=dict)
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0

    def add(self, name: str, value) -> np.ndarray:
        if name in self.values:
            raise KeyError(f"parameter {name!r} already registered")
        value = np.array(value, dtype=np.float64)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        self.adam_m[name] = np.zeros_like(value)
        self.adam_v[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self) -> list[str]:
        return list(self.values)

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        self.grads[name] += grad

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def num_scalars(self) -> int:
        return sum(v.size for v in self.values.values())

    def copy(self) -> "ParamStore":
        return ParamStore(
            values={k: v.copy() for k, v in self.values.items()},
            grads={k: v.copy() for k, v in self.grads.items()},
            adam_m={k: v.copy() for k, v in self.adam_m.items()},
            adam_v={k: v.copy() for k, v in self.adam_v.items()},
            step_count=self.step_count,
        )

    def subset(self, prefix: str) -> list[str]:
        return [k for k in self.values if k.startswith(prefix)]


def adam_step(
    store: ParamStore,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """One bias-corrected Adam update over every entry; gradients are zeroed afterwards."""
    for name, g in store.grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter {name!r}")
    t = store.step_count + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, value in store.values.items():
        g = store.grads[name]
        m = store.adam_m[name]
        v = store.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        g.fill(0.0)
    store.step_count = t
    return store


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    violations: list[tuple[str, tuple, float, float, float]]
    rel_tol: float

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def gradient_check(
    loss_fn: Callable[[ParamStore], float],
    store: ParamStore,
    eps: float = 1e-5,
    rel_tol: float = 1e-4,
    abs_floor: float = 1e-5,
    names: Iterable[str] | None = None,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare ``store.grads`` (already filled by the caller) with central differences.

    The relative error of a scalar is ``|a - n| / max(|a|, |n|, abs_floor)``, so
    gradients below ``abs_floor`` are effectively checked in absolute terms.
    With ``max_entries`` only a random subset of each parameter is probed.
    """
    names = list(store.values) if names is None else list(names)
    analytic = {k: store.grads[k].copy() for k in names}
    errors: dict[str, float] = {}
    violations = []
    for name in names:
        value = store.values[name]
        flat = value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or make_rng(0, name)).choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(loss_fn(store))
            flat[i] = orig - eps
            fm = float(loss_fn(store))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"non-finite loss while probing {name}[{i}]")
            num = (fp - fm) / (2.0 * eps)
            ana = float(analytic[name].reshape(-1)[i])
            rel = abs(ana - num) / max(abs(ana), abs(num), abs_floor)
            worst = max(worst, rel)
            if rel >= rel_tol:
                violations.append((name, np.unravel_index(i, value.shape), ana, num, rel))
        errors[name] = worst
    return GradCheckReport(errors, violations, rel_tol)
