"""Training objectives.

Every loss takes arrays or :class:`~revup.autodiff.Tensor` values and returns
a scalar Tensor, so the same code computes reported values and gradients.
Pair losses take parallel arrays, one entry per pair, and average over pairs.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, fields

import numpy as np
from loguru import logger

from revup import autodiff as ad
from revup.autodiff import Operand, Tensor
from revup.config import LossWeights
from revup.exceptions import LossError
from revup.model import ModelParams, ZilnParams, is_regularized
from revup.serialization.history import SerialLossBreakdown

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


# --------------------------------------------
# ---------------- Regression ----------------
# --------------------------------------------


def ziln_nll(y: np.ndarray, logit: Operand, mu: Operand, sigma: Operand) -> Tensor:
    """Mean zero-inflated lognormal negative log-likelihood.

    The purchase term is the cross-entropy computed from the logit:
    `softplus(-logit)` for positive responses and `softplus(logit)` for zeros.
    Positive responses add `log(y * sigma * sqrt(2 pi)) + (log y - mu)^2 / (2 sigma^2)`.
    """
    y = np.asarray(y, dtype=np.float64)
    positive = y > 0
    log_y = np.log(np.where(positive, y, 1.0))
    sigma = ad.as_tensor(sigma)
    lognormal = (
        log_y
        + ad.log(sigma)
        + _HALF_LOG_2PI
        + ad.square(log_y - ad.as_tensor(mu)) / (2.0 * ad.square(sigma))
    )
    per_sample = ad.where(
        positive,
        ad.softplus(-ad.as_tensor(logit)) + lognormal,
        ad.softplus(logit),
    )
    return ad.mean(per_sample)


def loss_ziln(y: np.ndarray | float, head: ZilnParams) -> float:
    """ZILN loss of evaluated head parameters, averaged over samples.

    Example:
        >>> round(loss_ziln(0.0, ZilnParams(p=0.5, mu=0.0, sigma=1.0)), 6)
        0.693147
        >>> round(loss_ziln(1.0, ZilnParams(p=0.8, mu=0.0, sigma=1.0)), 6)
        1.142082

    Raises:
        LossError: If the result is not finite.
    """
    p = np.asarray(head.p, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logit = np.log(p) - np.log1p(-p)
    value = ziln_nll(np.atleast_1d(y), np.atleast_1d(logit), head.mu, head.sigma).item()
    if not math.isfinite(value):
        msg = f"ZILN loss is not finite ({value}); check sigma and mu"
        raise LossError(msg)
    return value


def loss_mse(prediction: Operand, y: np.ndarray) -> Tensor:
    """Mean squared error of scalar heads."""
    residual = ad.as_tensor(prediction) - np.asarray(y, dtype=np.float64)
    return ad.mean(ad.square(residual))


# --------------------------------------------
# ----------------- Ranking ------------------
# --------------------------------------------


def response_scale(*responses: np.ndarray) -> float:
    """Mean positive response over all arrays, 1 when none is positive.

    Ranking terms measure responses and predictions in this unit so their
    magnitude does not grow with the currency of the data.

    Example:
        >>> response_scale(np.array([0.0, 4.0]), np.array([2.0, 0.0]))
        3.0
        >>> response_scale(np.zeros(3))
        1.0
    """
    y = np.concatenate([np.ravel(np.asarray(r, dtype=np.float64)) for r in responses])
    positive = y[y > 0]
    return float(positive.mean()) if positive.size else 1.0


def _hinge_square(first: Tensor, second: Tensor, what: str) -> Tensor:
    """Mean of `(first - second)^2` over pairs where `first * second < 0`."""
    if first.value.size == 0:
        logger.warning("No {} pairs; the loss is 0", what)
        return Tensor(0.0)
    discordant = first.value * second.value < 0
    return ad.mean(ad.where(discordant, ad.square(first - second), 0.0))


def loss_wr_rank(
    pred_i: Operand, pred_j: Operand, obs_i: Operand, obs_j: Operand
) -> Tensor:
    """Within-group response ranking loss over pairs from one group.

    A pair is penalized by the squared gap between predicted and observed
    differences when the two differences disagree in sign.

    Example:
        >>> float(loss_wr_rank([1.0], [2.0], [3.0], [1.0]))
        9.0
        >>> float(loss_wr_rank([2.0], [1.0], [3.0], [1.0]))
        0.0
    """
    pred_gap = ad.as_tensor(pred_i) - ad.as_tensor(pred_j)
    obs_gap = ad.as_tensor(obs_i) - ad.as_tensor(obs_j)
    return _hinge_square(pred_gap, obs_gap, "within-group")


def loss_cr_rank(
    pred_i: Operand, obs_i: Operand, obs_j: Operand, pred_j: Operand
) -> Tensor:
    """Cross-group response ranking loss.

    Sample `i` comes from one group and `j` from the other. The mixed gaps
    `pred_i - obs_j` and `obs_i - pred_j` are penalized when they disagree in
    sign. Pass (treated, control) pairs and (control, treated) pairs to cover
    both directions.

    Example:
        >>> float(loss_cr_rank([0.5], [3.0], [1.0], [2.0]))
        2.25
    """
    first = ad.as_tensor(pred_i) - ad.as_tensor(obs_j)
    second = ad.as_tensor(obs_i) - ad.as_tensor(pred_j)
    return _hinge_square(first, second, "cross-group")


def loss_lu_rank(
    uplift_treated: Operand,
    y_treated: np.ndarray,
    uplift_control: Operand,
    y_control: np.ndarray,
) -> Tensor:
    """Listwise uplift ranking loss over one batch.

    The softmax runs over the predicted uplifts of the union of both groups.
    Treated responses reward probability mass, control responses penalize it.

    Example:
        >>> round(float(loss_lu_rank([0.0], [2.0], [0.0], [1.0])), 6)
        0.693147

    Raises:
        LossError: If either group is empty.
    """
    ut, uc = ad.as_tensor(uplift_treated), ad.as_tensor(uplift_control)
    nt, nc = ut.value.size, uc.value.size
    if nt == 0 or nc == 0:
        msg = (
            f"listwise uplift loss needs both groups, got {nt} treated and"
            f" {nc} control samples"
        )
        raise LossError(msg)
    log_p = ad.log_softmax(ad.concat([ut, uc], axis=0))
    treated_term = ad.mean(log_p[:nt] * np.asarray(y_treated, dtype=np.float64))
    control_term = ad.mean(log_p[nt:] * np.asarray(y_control, dtype=np.float64))
    return control_term - treated_term


def loss_mmd(phi_treated: Operand, phi_control: Operand) -> Tensor:
    """Squared linear-kernel maximum mean discrepancy between representations.

    Example:
        >>> float(loss_mmd([[1.0, 0.0], [1.0, 0.0]], [[0.0, 0.0]]))
        1.0

    Raises:
        LossError: If a set is empty or the dimensions differ.
    """
    pt, pc = ad.as_tensor(phi_treated), ad.as_tensor(phi_control)
    if pt.value.ndim != 2 or pc.value.ndim != 2 or pt.shape[1] != pc.shape[1]:
        msg = f"representation dimensions differ: {pt.shape} vs {pc.shape}"
        raise LossError(msg)
    if pt.shape[0] == 0 or pc.shape[0] == 0:
        msg = "balancing loss needs both groups non-empty"
        raise LossError(msg)
    ones_t = np.full((1, pt.shape[0]), 1.0 / pt.shape[0])
    ones_c = np.full((1, pc.shape[0]), 1.0 / pc.shape[0])
    gap = ad.matmul(ones_t, pt) - ad.matmul(ones_c, pc)
    return ad.sum_all(ad.square(gap))


# --------------------------------------------
# ---------------- Objective -----------------
# --------------------------------------------


def l2_norm(params: Mapping[str, Operand]) -> Tensor:
    """Sum of squares of all weights and embeddings, biases excluded."""
    total: Tensor = Tensor(0.0)
    for name, value in params.items():
        if is_regularized(name):
            total = total + ad.sum_all(ad.square(value))
    return total


@dataclass(frozen=True)
class LossTerms:
    """Unweighted component losses of one step."""

    ziln: Operand = 0.0
    wr_rank: Operand = 0.0
    cr_rank: Operand = 0.0
    lu_rank: Operand = 0.0
    mmd: Operand = 0.0


@dataclass(frozen=True)
class LossBreakdown:
    """Component values and the weighted total.

    In MSE head mode `ziln` holds the regression MSE. `l2` is the unweighted
    squared norm; the total adds `l2_coefficient * l2`.
    """

    ziln: float
    wr_rank: float
    cr_rank: float
    lu_rank: float
    mmd: float
    l2: float
    total: float

    @classmethod
    def mean(cls, items: list[LossBreakdown]) -> LossBreakdown:
        return cls(
            **{
                f.name: float(np.mean([getattr(b, f.name) for b in items]))
                for f in fields(cls)
            }
        )

    def to_serial(self) -> SerialLossBreakdown:
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        return SerialLossBreakdown(**values)


def objective(
    terms: LossTerms, weights: LossWeights, params: Mapping[str, Operand]
) -> tuple[Tensor, LossBreakdown]:
    """Weighted objective as a graph node, with its breakdown.

    Raises:
        LossError: If the total is not finite.
    """
    norm = l2_norm(params)
    parts = {
        "ziln": (weights.w_ziln, terms.ziln),
        "wr_rank": (weights.w_wr, terms.wr_rank),
        "cr_rank": (weights.w_cr, terms.cr_rank),
        "lu_rank": (weights.w_lu, terms.lu_rank),
        "mmd": (weights.w_mmd, terms.mmd),
        "l2": (weights.l2, norm),
    }
    total: Tensor = Tensor(0.0)
    values: dict[str, float] = {}
    for name, (weight, term) in parts.items():
        term = ad.as_tensor(term)
        values[name] = term.item()
        if weight != 0.0:
            total = total + weight * term
    if not math.isfinite(total.item()):
        msg = f"objective is not finite: {values}"
        raise LossError(msg)
    return total, LossBreakdown(**values, total=total.item())


def loss_overall(
    terms: LossTerms, weights: LossWeights, params: ModelParams | Mapping[str, Operand]
) -> LossBreakdown:
    """Weighted sum of component losses plus the L2 penalty.

    Example:
        >>> w = LossWeights(l2=0.0)
        >>> loss_overall(LossTerms(1.0, 2.0, 3.0, 4.0, 0.0), w, {}).total
        10.0
        >>> w = LossWeights(w_ziln=0, w_wr=0, w_cr=0, w_lu=0, l2=0.1)
        >>> round(loss_overall(LossTerms(), w, {"w": np.array(2.0)}).total, 12)
        0.4
    """
    return objective(terms, weights, params)[1]
