import pytest
from pydantic import ValidationError

from revup.config import (
    Backbone,
    DataConfig,
    HeadMode,
    LossWeights,
    ModelConfig,
    RunConfig,
    SchemaSpec,
    SyntheticConfig,
    TrainConfig,
    Variant,
    apply_variant,
)


def test_train_config_invariants():
    TrainConfig(batch_size=2, pair_sample_size=2, learning_rate=0.0)
    with pytest.raises(ValidationError, match="pair_sample_size"):
        TrainConfig(batch_size=8, pair_sample_size=16)
    with pytest.raises(ValidationError, match="patience"):
        TrainConfig(max_epochs=5, patience=6)
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=1, pair_sample_size=1)
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=-0.1)
    with pytest.raises(ValidationError):
        TrainConfig(unknown_option=1)


def test_loss_weights_must_be_finite():
    with pytest.raises(ValidationError):
        LossWeights(w_lu=float("inf"))
    with pytest.raises(ValidationError):
        LossWeights(l2=-1.0)


def test_schema_spec():
    with pytest.raises(ValidationError, match="exactly two"):
        SchemaSpec(
            treatment_column="t", treatment_mapping={"a": 1}, response_column="y"
        )
    with pytest.raises(ValidationError, match="unique"):
        SchemaSpec(numeric_columns=["y"], response_column="y")
    with pytest.raises(ValidationError, match="without a treatment_column"):
        SchemaSpec(treatment_mapping={"a": 1, "b": 0}, response_column="y")


def test_data_source(tmp_path):
    with pytest.raises(ValidationError, match="exactly one"):
        DataConfig()
    with pytest.raises(ValidationError, match="exactly one"):
        DataConfig(path=tmp_path, synthetic=SyntheticConfig())
    with pytest.raises(ValidationError, match="does not exist"):
        DataConfig(path=tmp_path / "absent.csv", hillstrom_arm="men")
    with pytest.raises(ValidationError, match="schema_spec"):
        DataConfig(path=tmp_path)
    assert DataConfig(synthetic=SyntheticConfig(n=10)).fractions == (0.6, 0.1, 0.3)


def test_synthetic_coefficient_lengths():
    with pytest.raises(ValidationError):
        SyntheticConfig(
            d_numeric=3, treated={"a": [0.0], "b": 0.0, "c": [0.0], "d": 0.0}
        )


@pytest.mark.parametrize(
    ("variant", "head", "w_lu", "w_rank"),
    [
        (Variant.BASE, HeadMode.MSE, 0.0, 0.0),
        (Variant.BASE_UR, HeadMode.MSE, 1.0, 0.0),
        (Variant.BASE_UR_RR, HeadMode.MSE, 1.0, 1.0),
        (Variant.FULL, HeadMode.ZILN, 1.0, 1.0),
        (Variant.BASE_ZILN, HeadMode.ZILN, 0.0, 0.0),
        (Variant.BASE_ZILN_UR, HeadMode.ZILN, 1.0, 0.0),
        (Variant.BASE_ZILN_RR, HeadMode.ZILN, 0.0, 1.0),
    ],
)
def test_variants(variant, head, w_lu, w_rank):
    model, weights = apply_variant(variant, ModelConfig(), LossWeights(w_ziln=0.5))
    assert model.head_mode is head
    assert (weights.w_lu, weights.w_wr, weights.w_cr) == (w_lu, w_rank, w_rank)
    assert weights.w_ziln == 0.5


def test_resolved_run_config():
    cfg = RunConfig.model_validate(
        {
            "seed": 4,
            "model": {"base_model": "cfr_mmd"},
            "variant": "base+ur",
            "data": {"synthetic": {"n": 100}},
        }
    ).resolved()
    assert cfg.train.seed == 4
    assert cfg.model.base_model is Backbone.CFR_MMD
    assert cfg.model.head_mode is HeadMode.MSE
    assert cfg.train.weights.w_mmd == 1.0
    assert cfg.train.weights.w_wr == 0.0

    tar = RunConfig().resolved()
    assert tar.train.weights.w_mmd == 0.0
    assert tar.model.head_mode is HeadMode.ZILN
