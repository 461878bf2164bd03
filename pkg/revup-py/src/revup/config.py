"""Configuration models for data, model, training, evaluation and runs.

All configuration is expressed as pydantic models so it can be loaded from and
echoed back to JSON. Invariants are enforced by validators at construction.
"""

from __future__ import annotations

import math
from enum import Enum
from pathlib import Path
from typing import Literal

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    field_validator,
    model_validator,
)
from typing_extensions import Self

default_model_config = ConfigDict(extra="forbid")


class ConfiguredBaseModel(BaseModel):
    model_config = default_model_config

    @classmethod
    def update_model_config(cls, config: ConfigDict):
        cls.model_config.update(config)


# --------------------------------------------
# ----------------- Data ---------------------
# --------------------------------------------


class SchemaSpec(ConfiguredBaseModel):
    """Column-role declaration for CSV ingestion.

    Example:
        >>> spec = SchemaSpec(
        ...     numeric_columns=["x"],
        ...     treatment_column="group",
        ...     treatment_mapping={"A": 1, "B": 0},
        ...     response_column="spend",
        ... )
        >>> spec.raw_treatment(1)
        'A'
    """

    numeric_columns: list[str] = Field(default_factory=list)
    categorical_columns: list[str] = Field(default_factory=list)
    #: None for raw exports that carry no binary assignment yet.
    treatment_column: str | None = None
    #: Raw treatment cell value to 0/1. Declared, never inferred.
    treatment_mapping: dict[str, int] = Field(default_factory=dict)
    response_column: str
    delimiter: str = ","

    @model_validator(mode="after")
    def _check_roles(self) -> Self:
        names = [
            *self.numeric_columns,
            *self.categorical_columns,
            self.response_column,
        ]
        if self.treatment_column is not None:
            names.append(self.treatment_column)
            if sorted(self.treatment_mapping.values()) != [0, 1]:
                msg = "treatment_mapping must map exactly two raw values to 1 and 0"
                raise ValueError(msg)
        elif self.treatment_mapping:
            msg = "treatment_mapping given without a treatment_column"
            raise ValueError(msg)
        if len(names) != len(set(names)):
            msg = f"column names must be unique across roles, got {names}"
            raise ValueError(msg)
        if len(self.delimiter) != 1:
            msg = "delimiter must be a single character"
            raise ValueError(msg)
        return self

    def raw_treatment(self, treatment: int) -> str:
        """The raw cell value declared for a 0/1 treatment."""
        for raw, t in self.treatment_mapping.items():
            if t == treatment:
                return raw
        return str(treatment)


class ArmCoefficients(ConfiguredBaseModel):
    """Generating coefficients of one arm of the synthetic RCT.

    Purchase probability is `sigmoid(a.x + b)` and the log-scale location of
    positive spend is `c.x + d`.
    """

    a: list[float]
    b: float
    c: list[float]
    d: float

    @model_validator(mode="after")
    def _check_lengths(self) -> Self:
        if len(self.a) != len(self.c):
            msg = "coefficient vectors a and c must have equal length"
            raise ValueError(msg)
        return self


class SyntheticConfig(ConfiguredBaseModel):
    """Synthetic randomized-trial generator settings."""

    n: PositiveInt = 20_000
    d_numeric: PositiveInt = 8
    sigma: PositiveFloat = 1.0
    #: Seed for drawing arm coefficients. Defaults to the generation seed.
    coefficient_seed: int | None = None
    #: Explicit coefficients override the seeded draw.
    treated: ArmCoefficients | None = None
    control: ArmCoefficients | None = None

    @model_validator(mode="after")
    def _check_arms(self) -> Self:
        for arm in (self.treated, self.control):
            if arm is not None and len(arm.a) != self.d_numeric:
                msg = f"arm coefficients must have length d_numeric={self.d_numeric}"
                raise ValueError(msg)
        return self


# --------------------------------------------
# ----------------- Model --------------------
# --------------------------------------------


class HeadMode(str, Enum):
    """What a response head emits."""

    ZILN = "ziln"
    MSE = "mse"


class Backbone(str, Enum):
    """Base uplift network. CFR adds a representation balancing term to TAR."""

    TAR = "tar"
    CFR_MMD = "cfr_mmd"


class Activation(str, Enum):
    RELU = "relu"
    ELU = "elu"


class ModelConfig(ConfiguredBaseModel):
    """Architecture of the shared-representation, two-head uplift network."""

    embedding_dim: PositiveInt = 10
    representation_layers: list[PositiveInt] = Field(default_factory=lambda: [64, 32])
    head_layers: list[PositiveInt] = Field(default_factory=lambda: [16])
    head_mode: HeadMode = HeadMode.ZILN
    base_model: Backbone = Backbone.TAR
    activation: Activation = Activation.ELU
    sigma_floor: PositiveFloat = 1e-4

    @property
    def head_outputs(self) -> int:
        """Output width of each head: (p-logit, mu, sigma-raw) or one scalar."""
        return 3 if self.head_mode is HeadMode.ZILN else 1


# --------------------------------------------
# --------------- Training -------------------
# --------------------------------------------


class LossWeights(ConfiguredBaseModel):
    """Per-term weights of the overall objective and the L2 coefficient."""

    w_ziln: NonNegativeFloat = 1.0
    w_wr: NonNegativeFloat = 1.0
    w_cr: NonNegativeFloat = 1.0
    w_lu: NonNegativeFloat = 1.0
    #: Representation balancing weight; 0 for TAR, 1 for CFR unless set.
    w_mmd: NonNegativeFloat = 0.0
    l2: NonNegativeFloat = 1e-5

    @field_validator("*")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            msg = "loss weights must be finite"
            raise ValueError(msg)
        return v

    def for_backbone(self, backbone: Backbone) -> LossWeights:
        """Resolve the default balancing weight for `backbone`.

        Example:
            >>> LossWeights().for_backbone(Backbone.CFR_MMD).w_mmd
            1.0
            >>> LossWeights(w_mmd=0.5).for_backbone(Backbone.CFR_MMD).w_mmd
            0.5
        """
        if backbone is Backbone.CFR_MMD and "w_mmd" not in self.model_fields_set:
            return self.model_copy(update={"w_mmd": 1.0})
        return self


class TrainConfig(ConfiguredBaseModel):
    """Optimization settings."""

    batch_size: int = Field(default=256, ge=2)
    pair_sample_size: int = Field(default=32, ge=2)
    learning_rate: NonNegativeFloat = 0.001
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: PositiveFloat = 1e-8
    max_epochs: PositiveInt = 100
    patience: PositiveInt = 10
    seed: int = 0
    weights: LossWeights = Field(default_factory=LossWeights)
    #: Abort when the total loss exceeds this magnitude.
    max_loss: PositiveFloat = 1e12

    @model_validator(mode="after")
    def _check(self) -> Self:
        if self.pair_sample_size > self.batch_size:
            msg = "pair_sample_size must not exceed batch_size"
            raise ValueError(msg)
        if self.patience > self.max_epochs:
            msg = "patience must not exceed max_epochs"
            raise ValueError(msg)
        if not all(0.0 <= b < 1.0 for b in self.adam_betas):
            msg = "adam_betas must lie in [0, 1)"
            raise ValueError(msg)
        return self


class Variant(str, Enum):
    """Ablation presets over a backbone: which modules are switched on.

    `ur` is the listwise uplift ranking loss, `rr` the within- and cross-group
    response ranking losses and `ziln` the zero-inflated lognormal heads
    (otherwise scalar heads trained with MSE). `full` enables everything.
    """

    BASE = "base"
    BASE_UR = "base+ur"
    BASE_UR_RR = "base+ur+rr"
    FULL = "full"
    BASE_ZILN = "base+ziln"
    BASE_ZILN_UR = "base+ziln+ur"
    BASE_ZILN_RR = "base+ziln+rr"

    @property
    def modules(self) -> frozenset[str]:
        if self is Variant.FULL:
            return frozenset({"ziln", "ur", "rr"})
        return frozenset(self.value.split("+")[1:])


def apply_variant(
    variant: Variant, model: ModelConfig, weights: LossWeights
) -> tuple[ModelConfig, LossWeights]:
    """Rewrite head mode and ranking weights for an ablation preset.

    Example:
        >>> m, w = apply_variant(Variant.BASE_UR, ModelConfig(), LossWeights())
        >>> m.head_mode.value, w.w_lu, w.w_wr
        ('mse', 1.0, 0.0)
    """
    mods = variant.modules
    head = HeadMode.ZILN if "ziln" in mods else HeadMode.MSE
    ranking = 1.0 if "rr" in mods else 0.0
    new_weights = weights.model_copy(
        update={
            "w_lu": 1.0 if "ur" in mods else 0.0,
            "w_wr": ranking,
            "w_cr": ranking,
        }
    )
    return model.model_copy(update={"head_mode": head}), new_weights


# --------------------------------------------
# ---------------- Runs ----------------------
# --------------------------------------------


class EvalConfig(ConfiguredBaseModel):
    buckets: int = Field(default=100, ge=2)
    #: Percentile of the LIFT@h metric.
    h: float = Field(default=30.0, gt=0.0, le=100.0)


class DataConfig(ConfiguredBaseModel):
    """Where the run's records come from and how they are split."""

    path: Path | None = None
    schema_spec: SchemaSpec | None = None
    #: Treat `path` as the raw Hillstrom export and keep this arm.
    hillstrom_arm: Literal["men", "women"] | None = None
    synthetic: SyntheticConfig | None = None
    fractions: tuple[float, float, float] = (0.6, 0.1, 0.3)

    @model_validator(mode="after")
    def _check_source(self) -> Self:
        if (self.path is None) == (self.synthetic is None):
            msg = "exactly one of data.path and data.synthetic must be given"
            raise ValueError(msg)
        if self.path is not None:
            if not self.path.exists():
                msg = f"input path {self.path} does not exist"
                raise ValueError(msg)
            if self.schema_spec is None and self.hillstrom_arm is None:
                msg = "data.schema_spec is required for CSV input"
                raise ValueError(msg)
        return self


class OutputConfig(ConfiguredBaseModel):
    directory: Path = Path("runs/latest")
    overwrite: bool = False


class RunConfig(ConfiguredBaseModel):
    """Fully resolved configuration of one CLI run."""

    seed: NonNegativeInt = 0
    data: DataConfig | None = None
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    variant: Variant | None = None

    def resolved(self) -> RunConfig:
        """Apply the variant preset and propagate the run seed.

        Example:
            >>> cfg = RunConfig(seed=3, variant=Variant.BASE).resolved()
            >>> cfg.train.seed, cfg.model.head_mode.value, cfg.train.weights.w_lu
            (3, 'mse', 0.0)
        """
        model, weights = self.model, self.train.weights
        if self.variant is not None:
            model, weights = apply_variant(self.variant, model, weights)
        weights = weights.for_backbone(model.base_model)
        train = self.train.model_copy(update={"seed": self.seed, "weights": weights})
        return self.model_copy(update={"model": model, "train": train})
