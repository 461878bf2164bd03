from __future__ import annotations

import math

import numpy as np
import pytest

from revup.config import EvalConfig, LossWeights, ModelConfig, TrainConfig
from revup.data import Dataset, partition_by_treatment, split
from revup.exceptions import Divergence, GroupTooSmall, NonFiniteError
from revup.losses import loss_lu_rank, response_scale
from revup.model import ModelParams, gradient, init_model, predict_arms
from revup.trainer import (
    SELECTED_BY_KRCC,
    AdamState,
    adam_step,
    batch_objective,
    evaluate_epoch,
    sample_pairs,
    train,
)

from .conftest import random_dataset, tiny_schema

TINY_MODEL = ModelConfig(embedding_dim=2, representation_layers=[8], head_layers=[4])


def quick_config(**kwargs) -> TrainConfig:
    defaults = {
        "batch_size": 32,
        "pair_sample_size": 8,
        "learning_rate": 0.01,
        "max_epochs": 3,
        "patience": 3,
        "seed": 7,
    }
    return TrainConfig(**(defaults | kwargs))


def test_adam_first_step():
    params = ModelParams({"w": np.array([0.0])})
    grads = ModelParams({"w": np.array([1.0])})
    config = TrainConfig(learning_rate=0.001)
    state = AdamState.zeros(params)
    new, state = adam_step(params, grads, state, config)
    assert new["w"][0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)
    assert state.t == 1
    # inputs untouched
    assert params["w"][0] == 0.0

    newer, _ = adam_step(new, grads, state, config)
    first = abs(new["w"][0] - params["w"][0])
    second = abs(newer["w"][0] - new["w"][0])
    assert second <= first + 1e-12


def test_adam_zero_learning_rate():
    rng = np.random.default_rng(0)
    params = ModelParams({"w": rng.normal(size=(3, 2)), "b": rng.normal(size=2)})
    grads = ModelParams({k: rng.normal(size=v.shape) for k, v in params.items()})
    new, _ = adam_step(
        params, grads, AdamState.zeros(params), TrainConfig(learning_rate=0.0)
    )
    assert new == params


def test_sample_pairs():
    rng = np.random.default_rng(3)
    pairs = sample_pairs(np.arange(10), np.arange(100, 110), 4, rng)
    assert pairs.tt.shape == (6, 2)
    assert pairs.cc.shape == (6, 2)
    assert pairs.tc.shape == (16, 2)
    assert np.array_equal(pairs.ct, pairs.tc[:, ::-1])
    assert np.all(pairs.tt[:, 0] != pairs.tt[:, 1])
    assert len(np.unique(pairs.tt)) == 4
    assert np.all(pairs.cc >= 100)
    with pytest.raises(GroupTooSmall):
        sample_pairs(np.arange(3), np.arange(10), 4, rng)


def test_group_too_small(dataset):
    train_set, val, _ = split(dataset, (0.6, 0.2, 0.2), seed=0)
    with pytest.raises(GroupTooSmall, match="batch size 32"):
        train(train_set, val, TINY_MODEL, quick_config())


def test_training_is_deterministic():
    train_set, val, _ = split(random_dataset(240, seed=1), (0.7, 0.15, 0.15), seed=0)
    params_a, history_a = train(train_set, val, TINY_MODEL, quick_config())
    params_b, history_b = train(train_set, val, TINY_MODEL, quick_config())
    assert params_a == params_b
    assert history_a.to_serial().to_json() == history_b.to_serial().to_json()
    params_c, _ = train(train_set, val, TINY_MODEL, quick_config(seed=8))
    assert params_a != params_c


def test_training_history(small_synthetic):
    ds, truth = small_synthetic
    cfg = quick_config(max_epochs=8, patience=8)
    train_set, val, _ = split(ds, (0.7, 0.15, 0.15), seed=0)
    params, history = train(train_set, val, TINY_MODEL, cfg)
    assert 1 <= len(history.epochs) <= 8
    assert [e.epoch for e in history.epochs] == list(range(1, len(history.epochs) + 1))
    assert history.best.epoch == history.best_epoch
    first, last = history.epochs[0].train_loss, history.epochs[-1].train_loss
    assert last.ziln < first.ziln
    # the returned parameters are those of the best epoch
    report = evaluate_epoch(params, TINY_MODEL, val)
    best = history.best.validation.auuc_norm
    assert report.auuc_norm == pytest.approx(best, nan_ok=True)


def test_early_stopping_without_progress():
    train_set, val, _ = split(random_dataset(240, seed=1), (0.7, 0.15, 0.15), seed=0)
    cfg = quick_config(learning_rate=0.0, max_epochs=10, patience=2)
    params, history = train(train_set, val, TINY_MODEL, cfg)
    assert params == init_model(TINY_MODEL, train_set.schema, cfg.seed)
    assert history.stopped_early
    assert history.best_epoch == 1
    assert len(history.epochs) == 3


def test_divergence_is_reported():
    train_set, val, _ = split(random_dataset(240, seed=1), (0.7, 0.15, 0.15), seed=0)
    with pytest.raises(Divergence, match="epoch 1, step 0"):
        train(train_set, val, TINY_MODEL, quick_config(max_loss=1e-9))


def test_history_serializes(tmp_path):
    train_set, val, _ = split(random_dataset(240, seed=1), (0.7, 0.15, 0.15), seed=0)
    cfg = quick_config(max_epochs=2, patience=2)
    _, history = train(train_set, val, TINY_MODEL, cfg)
    serial = history.to_serial()
    assert serial.best().epoch == history.best_epoch
    assert serial.train_config.seed == 7
    assert serial.encoder is None
    text = serial.to_json()
    assert serial.encoder is not None
    assert '"best_epoch"' in text


def test_non_finite_update_is_divergence(monkeypatch):
    def overflow(params, grads, state, config):
        raise NonFiniteError("Adam update", "head_t.w0")

    monkeypatch.setattr("revup.trainer.adam_step", overflow)
    train_set, val, _ = split(random_dataset(240, seed=1), (0.7, 0.15, 0.15), seed=0)
    with pytest.raises(Divergence, match="epoch 1, step 0") as info:
        train(train_set, val, TINY_MODEL, quick_config())
    assert isinstance(info.value.__cause__, NonFiniteError)


def test_ziln_loss_halves_on_a_fixed_batch():
    treated, control = partition_by_treatment(random_dataset(16, seed=2))
    pairs = sample_pairs(np.arange(8), np.arange(8), 4, np.random.default_rng(0))
    weights = LossWeights(w_wr=0.0, w_cr=0.0, w_lu=0.0, l2=0.0)
    cfg = TrainConfig(
        batch_size=8, pair_sample_size=4, learning_rate=0.02, weights=weights
    )
    params = init_model(TINY_MODEL, tiny_schema(), seed=1)
    state = AdamState.zeros(params)
    seen: list[float] = []

    def loss(leaves):
        total, breakdown = batch_objective(
            leaves, TINY_MODEL, cfg, treated.batch, control.batch, pairs
        )
        seen.append(breakdown.ziln)
        return total

    for _ in range(200):
        params, state = adam_step(params, gradient(params, loss), state, cfg)
    assert seen[0] > 0
    assert seen[-1] <= 0.5 * seen[0]


def test_selection_falls_back_to_krcc(log_messages):
    train_set, val, _ = split(random_dataset(240, seed=1), (0.7, 0.15, 0.15), seed=0)
    # treated never buy, so validation uplift is negative and AUUC undefined
    b = val.batch
    response = np.where(b.treatment == 1, 0.0, 1.0 + np.arange(len(val)))
    losing = Dataset.from_arrays(
        val.schema, b.numeric, b.categorical, b.treatment, response
    )
    _, history = train(
        train_set, losing, TINY_MODEL, quick_config(), EvalConfig(buckets=4)
    )
    reports = [e.validation for e in history.epochs]
    assert all(math.isnan(r.auuc_norm) for r in reports)
    assert all(math.isfinite(r.krcc) for r in reports)
    assert all(SELECTED_BY_KRCC in r.flags for r in reports)
    best = max(history.epochs, key=lambda e: e.validation.krcc)
    assert history.best_epoch == best.epoch
    assert any("using KRCC" in m for m in log_messages)


def test_ranking_terms_use_response_units():
    treated, control = partition_by_treatment(random_dataset(16, seed=2))
    pairs = sample_pairs(np.arange(8), np.arange(8), 4, np.random.default_rng(0))
    cfg = TrainConfig(batch_size=8, pair_sample_size=4)
    params = init_model(TINY_MODEL, tiny_schema(), seed=1)
    _, breakdown = batch_objective(
        params.leaves(), TINY_MODEL, cfg, treated.batch, control.batch, pairs
    )
    y_t, y_c = treated.batch.response, control.batch.response
    y = np.concatenate([y_t, y_c])
    scale = response_scale(y_t, y_c)
    assert scale == pytest.approx(y[y > 0].mean())
    t1, t0 = predict_arms(params, TINY_MODEL, treated.batch)
    c1, c0 = predict_arms(params, TINY_MODEL, control.batch)
    expected = loss_lu_rank(
        (t1 - t0) / scale, y_t / scale, (c1 - c0) / scale, y_c / scale
    ).item()
    assert breakdown.lu_rank == pytest.approx(expected, rel=1e-9)
