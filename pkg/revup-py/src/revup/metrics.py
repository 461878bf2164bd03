"""Uplift ranking evaluation: uplift and Qini curves, their normalized areas,
bucket-level Kendall correlation, LIFT@h and MAPE.

Samples are ranked by predicted uplift, descending, with ties kept in input
order. Curves are evaluated at `buckets` prefix lengths `floor(n * p / buckets)`
for `p = 1..buckets`, the last covering all samples. Quantities that are
undefined for the data at hand are NaN and described in an optional `flags`
list, never silently replaced.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

import numpy as np
import pandas as pd
from loguru import logger
from scipy.stats import kendalltau

from revup.exceptions import MetricError
from revup.serialization.history import SerialMetricReport

if TYPE_CHECKING:
    from pathlib import Path

    from numpy.typing import ArrayLike

UNDEFINED = "undefined"


def _flag(flags: list[str] | None, message: str) -> None:
    logger.warning(message)
    if flags is not None:
        flags.append(message)


@dataclass(frozen=True)
class ScoredSample:
    """One evaluated individual."""

    uplift: float
    treatment: int
    response: float
    #: Prediction of the head of the observed arm, for MAPE.
    prediction: float | None = None


@dataclass(frozen=True)
class Scored:
    """Columnar scored samples.

    Raises:
        MetricError: If arrays differ in length, treatments are not 0/1 or an
            uplift is not finite.
    """

    uplift: np.ndarray
    treatment: np.ndarray
    response: np.ndarray
    prediction: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = len(self.uplift)
        lengths = {len(self.treatment), len(self.response)}
        if self.prediction is not None:
            lengths.add(len(self.prediction))
        if lengths != {n}:
            msg = "scored arrays differ in length"
            raise MetricError(msg)
        if not np.all(np.isfinite(self.uplift)):
            msg = "predicted uplift contains NaN or infinity"
            raise MetricError(msg)
        if not np.all(np.isin(self.treatment, (0, 1))):
            msg = "treatment values must be 0 or 1"
            raise MetricError(msg)

    @classmethod
    def of(
        cls,
        uplift: ArrayLike,
        treatment: ArrayLike,
        response: ArrayLike,
        prediction: ArrayLike | None = None,
    ) -> Scored:
        return cls(
            np.asarray(uplift, dtype=np.float64),
            np.asarray(treatment, dtype=np.int64),
            np.asarray(response, dtype=np.float64),
            None if prediction is None else np.asarray(prediction, dtype=np.float64),
        )

    @classmethod
    def from_samples(cls, samples: Sequence[ScoredSample]) -> Scored:
        predictions = [s.prediction for s in samples]
        return cls.of(
            [s.uplift for s in samples],
            [s.treatment for s in samples],
            [s.response for s in samples],
            None if any(p is None for p in predictions) else predictions,
        )

    def __len__(self) -> int:
        return len(self.uplift)


def rank_descending(scored: Scored | ArrayLike) -> np.ndarray:
    """Sample indices by predicted uplift, highest first, ties in input order.

    Example:
        >>> rank_descending([1.0, 3.0, 2.0]).tolist()
        [1, 2, 0]
    """
    uplift = scored.uplift if isinstance(scored, Scored) else np.asarray(scored)
    return np.argsort(-uplift, kind="stable")


# --------------------------------------------
# ------------------ Curves ------------------
# --------------------------------------------


@dataclass(frozen=True)
class CurvePoints:
    """Curve values and prefix statistics, one entry per bucket."""

    kind: Literal["uplift", "qini"]
    fraction: np.ndarray
    value: np.ndarray
    n_treated: np.ndarray
    n_control: np.ndarray
    r_treated: np.ndarray
    r_control: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return (self.n_treated > 0) & (self.n_control > 0)

    def __len__(self) -> int:
        return len(self.value)


def bucket_prefixes(n: int, buckets: int) -> np.ndarray:
    """Prefix lengths evaluated by the curves.

    Example:
        >>> bucket_prefixes(10, 4).tolist()
        [2, 5, 7, 10]
    """
    ks = (n * np.arange(1, buckets + 1)) // buckets
    ks[-1] = n
    return ks


def _prefix_stats(
    scored: Scored, buckets: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if len(scored) == 0:
        msg = "cannot evaluate curves on zero samples"
        raise MetricError(msg)
    if buckets < 1:
        msg = f"bucket count must be positive, got {buckets}"
        raise MetricError(msg)
    order = rank_descending(scored)
    t = scored.treatment[order]
    y = scored.response[order]
    ks = bucket_prefixes(len(scored), buckets)
    zero = np.zeros(1)
    n_t = np.concatenate([zero, np.cumsum(t)])[ks]
    n_c = np.concatenate([zero, np.cumsum(1 - t)])[ks]
    r_t = np.concatenate([zero, np.cumsum(np.where(t == 1, y, 0.0))])[ks]
    r_c = np.concatenate([zero, np.cumsum(np.where(t == 0, y, 0.0))])[ks]
    return ks / len(scored), n_t, n_c, r_t, r_c


def _curve(
    kind: Literal["uplift", "qini"],
    scored: Scored,
    buckets: int,
    flags: list[str] | None,
) -> CurvePoints:
    fraction, n_t, n_c, r_t, r_c = _prefix_stats(scored, buckets)
    defined = (n_t > 0) & (n_c > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == "uplift":
            value = (r_t / n_t - r_c / n_c) * (n_t + n_c)
        else:
            value = r_t - r_c * (n_t / n_c)
    value = np.where(defined, value, np.nan)
    missing = int((~defined).sum())
    if missing:
        _flag(
            flags,
            f"{kind} curve: {missing} of {buckets} buckets lack a treated or"
            " control sample and are undefined",
        )
    return CurvePoints(kind, fraction, value, n_t, n_c, r_t, r_c)


def uplift_curve_values(
    scored: Scored, buckets: int = 100, flags: list[str] | None = None
) -> CurvePoints:
    """Cumulative uplift `(R_T / N_T - R_C / N_C) * (N_T + N_C)` per bucket."""
    return _curve("uplift", scored, buckets, flags)


def qini_curve_values(
    scored: Scored, buckets: int = 100, flags: list[str] | None = None
) -> CurvePoints:
    """Cumulative Qini value `R_T - R_C * N_T / N_C` per bucket."""
    return _curve("qini", scored, buckets, flags)


def normalized_area(curve: CurvePoints, flags: list[str] | None = None) -> float:
    """Mean of the defined bucket values divided by the full-population value.

    NaN, with a flag, when the full-population value is undefined or not
    positive.
    """
    final = curve.value[-1]
    if not np.isfinite(final) or final <= 0:
        _flag(
            flags,
            f"{curve.kind} area undefined: full-population value {final} is not"
            " positive",
        )
        return math.nan
    defined = curve.defined
    return float(curve.value[defined].sum() / (defined.sum() * final))


def auuc(curve: CurvePoints, flags: list[str] | None = None) -> float:
    """Normalized area under an uplift curve."""
    return normalized_area(curve, flags)


def auqc(curve: CurvePoints, flags: list[str] | None = None) -> float:
    """Normalized area under a Qini curve."""
    return normalized_area(curve, flags)


def export_curves(curve: CurvePoints, path: Path) -> None:
    """Write one CSV row per bucket. Undefined values are empty cells."""
    frame = pd.DataFrame(
        {
            "fraction": curve.fraction,
            "value": curve.value,
            "n_treated": curve.n_treated.astype(np.int64),
            "n_control": curve.n_control.astype(np.int64),
            "r_treated": curve.r_treated,
            "r_control": curve.r_control,
            "flag": np.where(curve.defined, "", UNDEFINED),
        }
    )
    frame.to_csv(path, index=False, lineterminator="\n", na_rep="")


# --------------------------------------------
# ---------------- Rank metrics --------------
# --------------------------------------------


def _merge_buckets(
    parts: list[np.ndarray], ok: Callable[[np.ndarray], bool]
) -> list[np.ndarray]:
    merged: list[np.ndarray] = []
    pending = np.empty(0, dtype=np.int64)
    for part in parts:
        pending = np.concatenate([pending, part])
        if ok(pending):
            merged.append(pending)
            pending = np.empty(0, dtype=np.int64)
    if len(pending) and merged:
        merged[-1] = np.concatenate([merged[-1], pending])
    return merged


def krcc(
    scored: Scored,
    buckets: int = 100,
    true_uplift: ArrayLike | None = None,
    flags: list[str] | None = None,
) -> float:
    """Kendall tau-b between the predicted bucket order and per-bucket uplift.

    Samples ranked by predicted uplift are cut into `buckets` contiguous,
    near-equal buckets. Each bucket's uplift is its treated mean response
    minus its control mean response, or the mean of `true_uplift` when given.
    Buckets lacking a group are merged into the next one; a trailing
    remainder merges into the last complete bucket.

    Raises:
        MetricError: If fewer than two buckets remain after merging.
    """
    if len(scored) and np.ptp(scored.uplift) == 0:
        _flag(flags, "KRCC: all predicted uplifts are tied; reported as 0")
        return 0.0
    order = rank_descending(scored)
    parts = np.array_split(order, buckets)
    t = scored.treatment
    if true_uplift is None:
        merged = _merge_buckets(
            parts, lambda idx: bool(np.any(t[idx] == 1) and np.any(t[idx] == 0))
        )
        y = scored.response
        u = np.array(
            [y[idx][t[idx] == 1].mean() - y[idx][t[idx] == 0].mean() for idx in merged]
        )
    else:
        truth = np.asarray(true_uplift, dtype=np.float64)
        merged = _merge_buckets(parts, lambda idx: len(idx) > 0)
        u = np.array([truth[idx].mean() for idx in merged])
    if len(merged) < 2:
        msg = f"KRCC needs at least 2 buckets with both groups, got {len(merged)}"
        raise MetricError(msg)
    if len(merged) < buckets:
        logger.debug("KRCC merged {} buckets into {}", buckets, len(merged))
    tau = kendalltau(np.arange(len(merged), 0, -1), u).statistic
    if not np.isfinite(tau):
        _flag(flags, "KRCC undefined: all bucket uplifts are equal")
        return math.nan
    return float(tau)


def lift_at_h(scored: Scored, h: float = 30.0, flags: list[str] | None = None) -> float:
    """Treated minus control mean response among the top `h` percent.

    The slice holds `ceil(n * h / 100)` samples.

    Example:
        >>> treatment = [1, 0, 1] + [0] * 7
        >>> s = Scored.of(np.arange(10, 0, -1), treatment, [5, 2, 5] + [0] * 7)
        >>> lift_at_h(s, 30)
        3.0
    """
    if not 0 < h <= 100:
        msg = f"h must lie in (0, 100], got {h}"
        raise MetricError(msg)
    k = math.ceil(round(len(scored) * h / 100.0, 9))
    top = rank_descending(scored)[:k]
    t, y = scored.treatment[top], scored.response[top]
    if not (np.any(t == 1) and np.any(t == 0)):
        _flag(
            flags,
            f"LIFT@{h:g} undefined: the top slice lacks a treated or control sample",
        )
        return math.nan
    return float(y[t == 1].mean() - y[t == 0].mean())


def mape(
    prediction: ArrayLike, response: ArrayLike, flags: list[str] | None = None
) -> float:
    """Mean absolute percentage error over positive responses.

    Example:
        >>> mape([1.0, 5.0], [2.0, 4.0])
        0.375
    """
    yhat = np.asarray(prediction, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    positive = y > 0
    if not positive.any():
        _flag(flags, "MAPE undefined: no positive responses")
        return math.nan
    return float(np.mean(np.abs(yhat[positive] - y[positive]) / y[positive]))


# --------------------------------------------
# ------------------ Report ------------------
# --------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    auuc_norm: float
    auqc_norm: float
    krcc: float
    lift_at_h: float
    h: float
    mape: float
    flags: list[str] = field(default_factory=list)
    krcc_truth: float | None = None
    uplift_curve: CurvePoints | None = field(default=None, repr=False, compare=False)
    qini_curve: CurvePoints | None = field(default=None, repr=False, compare=False)

    def to_serial(self) -> SerialMetricReport:
        return SerialMetricReport(
            auuc_norm=self.auuc_norm,
            auqc_norm=self.auqc_norm,
            krcc=self.krcc,
            lift_at_h=self.lift_at_h,
            h=self.h,
            mape=self.mape,
            krcc_truth=self.krcc_truth,
            flags=list(self.flags),
        )


def evaluate(
    scored: Scored,
    buckets: int = 100,
    h: float = 30.0,
    true_uplift: ArrayLike | None = None,
) -> MetricReport:
    """Compute every metric; failures become NaN values with flags."""
    flags: list[str] = []
    uplift = uplift_curve_values(scored, buckets, flags)
    qini = qini_curve_values(scored, buckets, flags)

    def safe_krcc(truth: ArrayLike | None) -> float:
        try:
            return krcc(scored, buckets, truth, flags)
        except MetricError as err:
            _flag(flags, f"KRCC undefined: {err}")
            return math.nan

    if scored.prediction is None:
        _flag(flags, "MAPE undefined: no observed-arm predictions")
        mape_value = math.nan
    else:
        mape_value = mape(scored.prediction, scored.response, flags)

    return MetricReport(
        auuc_norm=auuc(uplift, flags),
        auqc_norm=auqc(qini, flags),
        krcc=safe_krcc(None),
        lift_at_h=lift_at_h(scored, h, flags),
        h=h,
        mape=mape_value,
        flags=flags,
        krcc_truth=None if true_uplift is None else safe_krcc(true_uplift),
        uplift_curve=uplift,
        qini_curve=qini,
    )
