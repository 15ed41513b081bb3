"""Joint optimisation of the identity-anchored and artifact-agnostic losses."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import data as D
from .errors import ConfigError, NonFiniteError, TrainingAborted
from .losses import artifact_agnostic_loss, identity_anchored_loss, subsample_negatives, total_loss
from .model import IDMiner, ModelConfig, center_video, checkpoint_bytes, load_checkpoint
from .numcore import adam_step, make_rng
from .sampler import SamplerConfig, TrainingBatch, build_training_batch, training_pool

log = logging.getLogger(__name__)

# fields that may differ between a checkpoint and the config used to resume it
RESUME_OVERRIDES = ("epochs", "lr", "checkpoint_every")


@dataclass
class TrainConfig:
    epochs: int = 150
    steps_per_epoch: int | None = None
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tau: float = 0.07
    lam: float = 0.1
    classes: int = 8
    videos_per_class: int = 8
    frames_per_pair: int = 16
    seed: int = 0
    checkpoint_every: int = 0
    artifact_loss: bool = True
    neg_samples: int | None = None

    def __post_init__(self):
        for name in ("epochs", "classes", "videos_per_class", "frames_per_pair"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.lr <= 0 or self.tau <= 0 or self.lam < 0:
            raise ConfigError("lr and tau must be > 0, lambda >= 0")

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(self.classes, self.videos_per_class, self.frames_per_pair)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainResult:
    model: IDMiner
    config: TrainConfig
    log: list[tuple[int, float, float, float]] = field(default_factory=list)

    def checkpoint(self) -> bytes:
        return checkpoint_bytes(self.model, self.config.to_dict())


def input_statistics(dataset: D.Dataset, center: bool = True) -> tuple[list[float], list[float]]:
    """Per-AU mean and std over genuine training frames, used to standardise encoder input.

    With ``center`` the frames are first centred per video, as the model will see them.
    """
    frames = np.concatenate([center_video(r.frames) if center else r.frames
                             for r in dataset.records(split="train", tag=D.GENUINE)])
    std = frames.std(axis=0)
    return frames.mean(axis=0).tolist(), np.where(std > 0, std, 1.0).tolist()


def default_model_config(dataset: D.Dataset, **overrides) -> ModelConfig:
    mean, scale = input_statistics(dataset, overrides.get("center", True))
    kw = dict(fau_dim=dataset.manifest.fau_dim, input_mean=mean, input_scale=scale)
    kw.update(overrides)
    return ModelConfig(**kw)


def steps_per_epoch(config: TrainConfig, pool) -> int:
    if config.steps_per_epoch:
        return config.steps_per_epoch
    n = sum(len(v) for v in pool.values())
    return max(1, n // (config.classes * config.videos_per_class))


def train_step(model: IDMiner, dataset: D.Dataset, batch: TrainingBatch, config: TrainConfig,
               rng: np.random.Generator) -> tuple[float, float, float]:
    """Forward, both losses, backward into ``model.store.grads``. No optimizer update."""
    reps, cache = model.forward_sequences([dataset.get(v).frames for v in batch.video_ids])
    neg = subsample_negatives(batch.neg_mask, config.neg_samples, rng)
    l_id, d_reps = identity_anchored_loss(reps, batch.pos_index, neg, config.tau)
    model.backward_sequences(cache, d_reps)

    l_art = 0.0
    if config.artifact_loss:
        prep = {}

        def frames(vid):
            if vid not in prep:
                prep[vid] = model.prepare(dataset.get(vid).frames, subsample_to_t_max=False)
            return prep[vid]

        q = np.stack([frames(batch.driving_ids[p])[i] for p, i in zip(batch.frame_item, batch.query_frame)])
        k = np.stack([frames(batch.video_ids[p])[i] for p, i in zip(batch.frame_item, batch.key_frame)])
        q_emb, q_cache = model.encoder.forward(q)
        k_emb, k_cache = model.encoder.forward(k)
        fneg = subsample_negatives(batch.frame_neg_mask, config.neg_samples, rng)
        l_art, dq, dk = artifact_agnostic_loss(q_emb, k_emb, fneg, config.tau)
        if config.lam > 0:
            model.encoder.backward(q_cache, config.lam * dq)
            model.encoder.backward(k_cache, config.lam * dk)
    return l_id, l_art, total_loss(l_id, l_art, config.lam)


def write_loss_log(rows, path: str | Path | None = None) -> bytes:
    lines = ["step,l_identity,l_artifact,l_total"]
    lines += [f"{s},{a!r},{b!r},{c!r}" for s, a, b, c in rows]
    payload = ("\n".join(lines) + "\n").encode()
    if path is not None:
        from .synth import atomic_write
        atomic_write(path, payload)
    return payload


def train(dataset: D.Dataset, config: TrainConfig, model: IDMiner | None = None,
          model_config: ModelConfig | None = None,
          checkpoint_path: str | Path | None = None,
          on_step: Callable[[int, tuple], None] | None = None) -> TrainResult:
    """Run (or continue, when ``model`` carries a step count) the training loop.

    Batches draw from ``make_rng(seed, "batch", step)``, so a resumed run replays
    exactly the batches an uninterrupted run would have seen.
    """
    pool = training_pool(dataset)
    spe = steps_per_epoch(config, pool)
    if model is None:
        model = IDMiner(model_config or default_model_config(dataset), seed=config.seed)
    result = TrainResult(model, config)
    total = config.epochs * spe
    last_ckpt = None
    for step in range(model.store.step_count, total):
        rng = make_rng(config.seed, "batch", step)
        batch = build_training_batch(dataset, config.sampler(), rng, pool)
        try:
            l_id, l_art, l_tot = train_step(model, dataset, batch, config, rng)
            if not np.isfinite(l_tot):
                raise NonFiniteError("non-finite total loss")
            adam_step(model.store, config.lr, config.beta1, config.beta2, config.eps)
        except NonFiniteError as exc:
            raise TrainingAborted(f"training aborted at step {step}: {exc}", step, last_ckpt) from exc
        row = (model.store.step_count, l_id, l_art, l_tot)
        result.log.append(row)
        if on_step is not None:
            on_step(step, row)
        if checkpoint_path is not None and config.checkpoint_every and \
                model.store.step_count % (config.checkpoint_every * spe) == 0:
            save_checkpoint(result, checkpoint_path)
            last_ckpt = checkpoint_path
    if checkpoint_path is not None:
        save_checkpoint(result, checkpoint_path)
    return result


def save_checkpoint(result: TrainResult, path: str | Path) -> None:
    from .synth import atomic_write
    atomic_write(path, result.checkpoint())


def config_diff(saved: dict, current: TrainConfig) -> dict[str, tuple]:
    cur = current.to_dict()
    return {k: (saved.get(k), cur[k]) for k in cur if saved.get(k) != cur[k]}


def resume(checkpoint, dataset: D.Dataset, config: TrainConfig | None = None,
           checkpoint_path: str | Path | None = None) -> TrainResult:
    """Continue training from a checkpoint (path or bytes).

    Only ``epochs``, ``lr`` and ``checkpoint_every`` may change; any other
    difference raises :class:`ConfigError` listing the differing fields.
    """
    model, saved = load_checkpoint(checkpoint)
    if config is None:
        config = TrainConfig(**saved)
    diff = config_diff(saved, config)
    fatal = {k: v for k, v in diff.items() if k not in RESUME_OVERRIDES}
    if fatal:
        raise ConfigError("resume config differs from checkpoint: " +
                          ", ".join(f"{k}: {a!r} -> {b!r}" for k, (a, b) in sorted(fatal.items())))
    for k, (a, b) in sorted(diff.items()):
        log.warning("resume override %s: %r -> %r", k, a, b)
    return train(dataset, config, model=model, checkpoint_path=checkpoint_path)
