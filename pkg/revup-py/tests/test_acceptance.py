"""End-to-end checks on full-size data. Minutes to tens of minutes each.

Run with ``pytest -m slow``. The Hillstrom check also needs the raw export at
``$REVUP_HILLSTROM``.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from revup.config import (
    LossWeights,
    ModelConfig,
    RunConfig,
    SyntheticConfig,
    TrainConfig,
    Variant,
    apply_variant,
)
from revup.data import (
    Dataset,
    adapt_hillstrom,
    fit_vocabularies,
    load_hillstrom,
    split_indices,
)
from revup.metrics import MetricReport
from revup.synthetic import generate_synthetic
from revup.trainer import evaluate_epoch, train

pytestmark = pytest.mark.slow

SEEDS = range(5)


def run(
    dataset: Dataset,
    cate: np.ndarray | None,
    variant: Variant,
    seed: int,
) -> MetricReport:
    """Train one ablation variant and report on the test split."""
    cfg = RunConfig(seed=seed, variant=variant).resolved()
    parts = split_indices(len(dataset), (0.6, 0.1, 0.3), seed)
    train_set, val_set, test_set = fit_vocabularies(*(dataset.subset(p) for p in parts))
    val_truth, test_truth = (
        (None, None) if cate is None else (cate[parts[1]], cate[parts[2]])
    )
    params, _ = train(
        train_set, val_set, cfg.model, cfg.train, cfg.eval, val_truth=val_truth
    )
    return evaluate_epoch(params, cfg.model, test_set, cfg.eval, test_truth)


@pytest.fixture(scope="module")
def synthetic_runs() -> dict[tuple[Variant, int], MetricReport]:
    reports = {}
    for seed in SEEDS:
        dataset, truth = generate_synthetic(SyntheticConfig(), seed)
        for variant in (
            Variant.BASE,
            Variant.BASE_UR,
            Variant.BASE_UR_RR,
            Variant.FULL,
            Variant.BASE_ZILN,
        ):
            reports[variant, seed] = run(dataset, truth.cate, variant, seed)
    return reports


def mean_of(reports, variant: Variant, metric: str) -> float:
    return float(np.nanmean([getattr(reports[variant, s], metric) for s in SEEDS]))


def test_recovers_synthetic_uplift(synthetic_runs):
    wins = 0
    for seed in SEEDS:
        full = synthetic_runs[Variant.FULL, seed]
        base = synthetic_runs[Variant.BASE, seed]
        assert full.krcc_truth is not None
        if full.krcc_truth >= 0.8 and full.auuc_norm > base.auuc_norm:
            wins += 1
    assert wins >= 4


def test_ablation_ordering(synthetic_runs):
    ladder = [Variant.BASE, Variant.BASE_UR, Variant.BASE_UR_RR, Variant.FULL]
    means = [mean_of(synthetic_runs, v, "auuc_norm") for v in ladder]
    for lower, upper in zip(means, means[1:]):
        assert lower <= upper + 0.005


def test_ziln_heads_lower_mape(synthetic_runs):
    assert mean_of(synthetic_runs, Variant.BASE_ZILN, "mape") < mean_of(
        synthetic_runs, Variant.BASE, "mape"
    )


def test_full_size_training_is_deterministic():
    dataset, _ = generate_synthetic(SyntheticConfig(), seed=11)
    parts = split_indices(len(dataset), (0.6, 0.1, 0.3), 11)
    train_set, val_set, _ = fit_vocabularies(*(dataset.subset(p) for p in parts))
    model, weights = apply_variant(Variant.FULL, ModelConfig(), LossWeights())
    config = TrainConfig(seed=11, max_epochs=5, patience=5, weights=weights)
    params_a, history_a = train(train_set, val_set, model, config)
    params_b, history_b = train(train_set, val_set, model, config)
    assert params_a == params_b
    assert history_a.to_serial().to_json() == history_b.to_serial().to_json()


@pytest.mark.skipif(
    "REVUP_HILLSTROM" not in os.environ, reason="REVUP_HILLSTROM is not set"
)
def test_hillstrom_men_improves_on_mse_baseline():
    raw = load_hillstrom(Path(os.environ["REVUP_HILLSTROM"]))
    dataset = adapt_hillstrom(raw, "men")
    gains = [
        run(dataset, None, Variant.FULL, seed).auuc_norm
        - run(dataset, None, Variant.BASE, seed).auuc_norm
        for seed in SEEDS
    ]
    assert float(np.mean(gains)) > 0.0
