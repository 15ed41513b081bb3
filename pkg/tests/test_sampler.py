from __future__ import annotations

from collections import Counter

import numpy as np
import pytest

from idminer.errors import CapacityError
from idminer.numcore import make_rng
from idminer.sampler import SamplerConfig, aligned_index, build_training_batch, training_pool
from idminer.synth import build_rddp_dataset

from conftest import small_config


@pytest.fixture(scope="module")
def ten_identities():
    # 8 train puppeteers x (4 recon + 4 forged) augmented videos
    return build_rddp_dataset(small_config(n=10, videos=4, frames=24, test=2), seed=5).dataset()


def check_batch(ds, b, cfg):
    ents = [ds.entry(v) for v in b.video_ids]
    n = cfg.classes * cfg.videos_per_class
    assert len(ents) == n == len(set(b.video_ids))
    counts = Counter(b.classes)
    assert len(counts) == cfg.classes and set(counts.values()) == {cfg.videos_per_class}
    for k in counts:
        assert len({e.appearance for e in ents if e.puppeteer == k}) >= 2
    for i, e in enumerate(ents):
        assert ds.manifest.split_of(e) == "train"
        assert b.driving_ids[i] == ds.driving_of(e.video_id)
        p = ents[b.pos_index[i]]
        assert p.puppeteer == e.puppeteer and p.appearance != e.appearance
        same_class_other_drive = [j for j, o in enumerate(ents) if o.puppeteer == e.puppeteer
                                  and o.appearance != e.appearance and b.driving_ids[j] != b.driving_ids[i]]
        if same_class_other_drive:
            assert b.driving_ids[b.pos_index[i]] != b.driving_ids[i]
        for j, o in enumerate(ents):
            assert b.neg_mask[i, j] == (o.puppeteer != e.puppeteer)
    per_item = Counter(b.frame_item.tolist())
    for p, c in per_item.items():
        assert c == min(cfg.frames_per_pair, ds.get(b.driving_ids[p]).length)
    for p, qi, ki in zip(b.frame_item, b.query_frame, b.key_frame):
        td, tf = ds.get(b.driving_ids[p]).length, ds.get(b.video_ids[p]).length
        assert 0 <= qi < td and 0 <= ki < tf
        assert ki == aligned_index(np.array([qi]), td, tf)[0]
    fcls = np.array(b.classes)[b.frame_item]
    assert np.array_equal(b.frame_neg_mask, fcls[:, None] != fcls[None, :])


def test_fuzzed_batches_satisfy_invariants(ten_identities):
    pool = training_pool(ten_identities)
    for i in range(1000):
        rng = make_rng(i, "fuzz")
        cfg = SamplerConfig(int(rng.integers(2, 9)), int(rng.integers(2, 9)), int(rng.integers(1, 20)))
        check_batch(ten_identities, build_training_batch(ten_identities, cfg, rng, pool), cfg)


def test_default_batch_shape(ten_identities):
    b = build_training_batch(ten_identities, SamplerConfig(), make_rng(0))
    assert len(b.video_ids) == 64 and b.frame_item.size == 64 * 16
    assert len(b.identity_instances()) == 64 and len(b.frame_instances()) == 64 * 16


def test_batches_are_seed_deterministic(ten_identities):
    a = build_training_batch(ten_identities, SamplerConfig(), make_rng(1))
    b = build_training_batch(ten_identities, SamplerConfig(), make_rng(1))
    assert a.video_ids == b.video_ids and np.array_equal(a.query_frame, b.query_frame)


def test_too_few_classes_is_a_capacity_error():
    ds = build_rddp_dataset(small_config(n=9, videos=4, frames=16, test=2), seed=5).dataset()
    with pytest.raises(CapacityError, match="found 7"):
        build_training_batch(ds, SamplerConfig(classes=8), make_rng(0))


def test_aligned_index():
    assert aligned_index(np.arange(4), 4, 8).tolist() == [0, 2, 4, 6]
    assert aligned_index(np.array([9]), 10, 10).tolist() == [9]
    assert aligned_index(np.array([9]), 10, 5).tolist() == [4]


def test_pool_holds_only_augmented_train_videos(ten_identities):
    pool = training_pool(ten_identities)
    assert len(pool) == 8
    for k, es in pool.items():
        assert len(es) == 8
        assert all(e.puppeteer == k and e.provenance.tag in ("forged", "reconstructed") for e in es)
