import math
from typing import Any, Literal

import numpy as np
from pydantic import ConfigDict, Field

import revup
from revup.config import ConfiguredBaseModel, ModelConfig, TrainConfig


class _FloatReport(ConfiguredBaseModel):
    # Undefined metrics are NaN and must survive a JSON round trip.
    model_config = ConfigDict(ser_json_inf_nan="constants")


class SerialLossBreakdown(_FloatReport):
    ziln: float
    wr_rank: float
    cr_rank: float
    lu_rank: float
    mmd: float
    l2: float
    total: float


class SerialMetricReport(_FloatReport):
    auuc_norm: float
    auqc_norm: float
    krcc: float
    lift_at_h: float
    h: float
    mape: float
    #: KRCC against known per-record uplift, when available.
    krcc_truth: float | None = None
    flags: list[str] = Field(default_factory=list)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    @classmethod
    def load_json(cls, json: dict[Any, Any]) -> "SerialMetricReport":
        return cls(**json)

    def metric_values(self) -> dict[str, float]:
        """Numeric metric fields, omitting an absent truth KRCC."""
        out = self.model_dump(exclude={"flags", "h"})
        if out["krcc_truth"] is None:
            del out["krcc_truth"]
        return out


class SerialEpoch(_FloatReport):
    epoch: int
    train_loss: SerialLossBreakdown
    validation: SerialMetricReport


class SerialHistory(_FloatReport):
    """Per-epoch training record of one run."""

    version: Literal["v1"] = "v1"
    encoder: str | None = None
    seed: int
    best_epoch: int
    stopped_early: bool
    architecture: ModelConfig
    train_config: TrainConfig
    epochs: list[SerialEpoch]

    def to_json(self) -> str:
        self.encoder = f"revup-py v{revup.__version__}"
        return self.model_dump_json(indent=2)

    @classmethod
    def load_json(cls, json: dict[Any, Any]) -> "SerialHistory":
        return cls(**json)

    @classmethod
    def get_version(cls) -> str:
        return cls.model_fields["version"].default

    def best(self) -> SerialEpoch:
        return next(e for e in self.epochs if e.epoch == self.best_epoch)


def summarize_reports(reports: list[SerialMetricReport]) -> dict[str, dict[str, float]]:
    """Mean and sample standard deviation of each metric over `reports`.

    NaN values are skipped; a metric undefined in every report summarizes to
    NaN.
    """
    names = list(reports[0].metric_values()) if reports else []
    out: dict[str, dict[str, float]] = {}
    for name in names:
        values = np.array(
            [r.metric_values().get(name, math.nan) for r in reports], dtype=np.float64
        )
        n = int(np.count_nonzero(~np.isnan(values)))
        mean = float(np.nanmean(values)) if n else math.nan
        std = float(np.nanstd(values, ddof=1)) if n > 1 else math.nan
        out[name] = {"mean": mean, "std": std, "n": float(n)}
    return out
