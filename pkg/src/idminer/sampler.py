"""Class-balanced training batches with positive/negative role assignment."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from . import data as D
from .errors import CapacityError


@dataclass
class SamplerConfig:
    classes: int = 8
    videos_per_class: int = 8
    frames_per_pair: int = 16


@dataclass
class TrainingBatch:
    """Roles for one optimisation step.

    Video level: item ``i`` (a forged or reconstructed video) is a query whose
    positive is item ``pos_index[i]``; ``neg_mask[i, j]`` marks negatives.
    Frame level: instance ``n`` takes frame ``query_frame[n]`` of the driving
    video of item ``frame_item[n]`` as query and frame ``key_frame[n]`` of the
    item itself as positive; ``frame_neg_mask`` marks negatives among the keys.
    """

    video_ids: list[str]
    classes: list[str]
    appearances: list[str]
    driving_ids: list[str]
    pos_index: np.ndarray
    neg_mask: np.ndarray
    frame_item: np.ndarray
    query_frame: np.ndarray
    key_frame: np.ndarray
    frame_neg_mask: np.ndarray

    def identity_instances(self):
        return [(self.video_ids[i], self.video_ids[self.pos_index[i]],
                 [self.video_ids[j] for j in np.flatnonzero(self.neg_mask[i])]) for i in range(len(self.video_ids))]

    def frame_instances(self):
        return [(self.driving_ids[p], self.video_ids[p], int(qi), int(ki))
                for p, qi, ki in zip(self.frame_item, self.query_frame, self.key_frame)]


def aligned_index(i: np.ndarray, len_driving: int, len_forged: int) -> np.ndarray:
    """Map driving frame ``i`` to ``round(i * T_forged / T_driving)``, clipped to a valid index."""
    j = np.rint(np.asarray(i) * (len_forged / len_driving)).astype(int)
    return np.clip(j, 0, len_forged - 1)


def training_pool(dataset: D.Dataset) -> dict[str, list[D.RecordEntry]]:
    """Augmented training videos grouped by puppeteer, sorted for determinism."""
    driving = dataset.manifest.metadata.get("driving", {})
    pool = defaultdict(list)
    for e in dataset.manifest.entries(split="train"):
        if e.provenance.tag in (D.FORGED, D.RECONSTRUCTED) and e.video_id in driving:
            pool[e.puppeteer].append(e)
    return {k: sorted(v, key=lambda e: e.video_id) for k, v in sorted(pool.items())}


def build_training_batch(dataset: D.Dataset, config: SamplerConfig, rng: np.random.Generator,
                         pool: dict[str, list[D.RecordEntry]] | None = None) -> TrainingBatch:
    pool = training_pool(dataset) if pool is None else pool
    c, v, f = config.classes, config.videos_per_class, config.frames_per_pair
    eligible = [k for k, es in pool.items() if len(es) >= v and len({e.appearance for e in es}) >= 2]
    if len(eligible) < c:
        raise CapacityError(
            f"need {c} puppeteer classes with >= {v} augmented videos and two appearances, "
            f"found {len(eligible)} (of {len(pool)} classes)")
    chosen = [eligible[i] for i in rng.choice(len(eligible), size=c, replace=False)]
    items: list[D.RecordEntry] = []
    for k in chosen:
        es = pool[k]
        picks = [es[i] for i in rng.choice(len(es), size=v, replace=False)]
        if len({e.appearance for e in picks}) < 2:
            other = [e for e in es if e.appearance != picks[0].appearance]
            picks[-1] = other[int(rng.integers(len(other)))]
        items.extend(picks)

    classes = [e.puppeteer for e in items]
    apps = [e.appearance for e in items]
    cls = np.array(classes)
    app = np.array(apps)
    driving = dataset.manifest.metadata["driving"]
    driving_ids = [driving[e.video_id] for e in items]
    drv = np.array(driving_ids)
    same = cls[:, None] == cls[None, :]
    neg_mask = ~same
    pos_index = np.empty(len(items), dtype=int)
    for i in range(len(items)):
        cand = same[i] & (app != app[i])
        # prefer a different action instance (driving video); fall back if the class lacks one
        strict = np.flatnonzero(cand & (drv != drv[i]))
        cand = strict if strict.size else np.flatnonzero(cand)
        pos_index[i] = cand[int(rng.integers(len(cand)))]

    frame_item, query_frame, key_frame = [], [], []
    for p, e in enumerate(items):
        td = dataset.get(driving_ids[p]).length
        tf = dataset.get(e.video_id).length
        qi = np.sort(rng.choice(td, size=min(f, td), replace=False))
        frame_item.append(np.full(len(qi), p))
        query_frame.append(qi)
        key_frame.append(aligned_index(qi, td, tf))
    frame_item = np.concatenate(frame_item)
    fcls = cls[frame_item]
    return TrainingBatch(
        video_ids=[e.video_id for e in items],
        classes=classes,
        appearances=apps,
        driving_ids=driving_ids,
        pos_index=pos_index,
        neg_mask=neg_mask,
        frame_item=frame_item,
        query_frame=np.concatenate(query_frame),
        key_frame=np.concatenate(key_frame),
        frame_neg_mask=fcls[:, None] != fcls[None, :],
    )
