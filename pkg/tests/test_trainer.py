from __future__ import annotations

import numpy as np
import pytest

import idminer.trainer as T
from idminer.errors import ConfigError, TrainingAborted
from idminer.model import load_checkpoint
from idminer.trainer import (TrainConfig, default_model_config, input_statistics, resume, train,
                             write_loss_log)


def quick(**kw):
    base = dict(epochs=2, steps_per_epoch=2, classes=2, videos_per_class=4, frames_per_pair=4, seed=1)
    base.update(kw)
    return TrainConfig(**base)


def small_model_config(ds):
    return default_model_config(ds, encoder_widths=(8, 8), encoder_activations=("tanh", "linear"),
                                hidden=8, rep_dim=8)


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.tau, cfg.lam) == \
        (150, 1e-3, 0.9, 0.999, 1e-8, 0.07, 0.1)
    assert (cfg.classes, cfg.videos_per_class, cfg.frames_per_pair) == (8, 8, 16)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(tau=0.0)


def test_training_is_deterministic(small_dataset):
    a = train(small_dataset, quick(), model_config=small_model_config(small_dataset))
    b = train(small_dataset, quick(), model_config=small_model_config(small_dataset))
    assert a.checkpoint() == b.checkpoint()
    assert write_loss_log(a.log) == write_loss_log(b.log)
    assert len(a.log) == 4 and a.model.store.step_count == 4


def test_resume_one_plus_one_equals_two(small_dataset, tmp_path):
    mc = small_model_config(small_dataset)
    one = train(small_dataset, quick(epochs=1), model_config=mc)
    resumed = resume(one.checkpoint(), small_dataset, quick(epochs=2))
    straight = train(small_dataset, quick(epochs=2), model_config=mc)
    assert resumed.checkpoint() == straight.checkpoint()


def test_resume_rejects_changed_config(small_dataset):
    one = train(small_dataset, quick(epochs=1), model_config=small_model_config(small_dataset))
    with pytest.raises(ConfigError, match="tau"):
        resume(one.checkpoint(), small_dataset, quick(epochs=2, tau=0.1))


def test_checkpoint_written_and_loadable(small_dataset, tmp_path):
    path = tmp_path / "m.ckpt"
    res = train(small_dataset, quick(), model_config=small_model_config(small_dataset), checkpoint_path=path)
    model, cfg = load_checkpoint(path)
    assert cfg == quick().to_dict()
    assert model.store.step_count == res.model.store.step_count


def test_zero_lambda_matches_no_artifact_loss(small_dataset):
    mc = small_model_config(small_dataset)
    a = train(small_dataset, quick(lam=0.0), model_config=mc)
    b = train(small_dataset, quick(lam=0.0, artifact_loss=False), model_config=mc)
    for k in a.model.store.names():
        assert np.array_equal(a.model.store[k], b.model.store[k])
    assert all(row[2] > 0 for row in a.log) and all(row[2] == 0 for row in b.log)


def test_total_is_identity_plus_lambda_artifact(small_dataset):
    res = train(small_dataset, quick(), model_config=small_model_config(small_dataset))
    for _, l_id, l_art, l_tot in res.log:
        assert l_tot == l_id + 0.1 * l_art


def test_loss_goes_down(small_dataset):
    res = train(small_dataset, quick(epochs=40, steps_per_epoch=1, lr=3e-3),
                model_config=small_model_config(small_dataset))
    tot = np.array([r[3] for r in res.log])
    assert tot[-10:].mean() < tot[:10].mean()


def test_non_finite_gradient_aborts_with_step(small_dataset, tmp_path, monkeypatch):
    real = T.train_step

    def poisoned(model, dataset, batch, config, rng):
        out = real(model, dataset, batch, config, rng)
        if model.store.step_count == 2:
            model.store.grads["gru.Wz"][0, 0] = np.nan
        return out

    monkeypatch.setattr(T, "train_step", poisoned)
    path = tmp_path / "m.ckpt"
    with pytest.raises(TrainingAborted) as info:
        train(small_dataset, quick(epochs=3, steps_per_epoch=1, checkpoint_every=1),
              model_config=small_model_config(small_dataset), checkpoint_path=path)
    assert info.value.step == 2
    assert info.value.checkpoint_path == path
    assert load_checkpoint(path)[0].store.step_count == 2


def test_input_statistics_are_centred(small_dataset):
    mean, scale = input_statistics(small_dataset)
    assert np.allclose(mean, 0.0, atol=1e-12)
    assert all(s > 0 for s in scale)
    raw_mean, _ = input_statistics(small_dataset, center=False)
    assert np.all(np.array(raw_mean) > 0.5)


def test_loss_log_format():
    text = write_loss_log([(1, 0.5, 0.25, 0.525)]).decode()
    assert text == "step,l_identity,l_artifact,l_total\n1,0.5,0.25,0.525\n"
